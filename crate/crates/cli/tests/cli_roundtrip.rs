//! End-to-end CLI checks: every file the CLI writes is readable by the
//! corresponding load path, exit codes follow the 0/1/2 convention, and
//! identical commands produce byte-identical outputs.

use std::path::Path;
use std::process::{Command, Output};

fn cavg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cavg")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_workflow_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Small library (l <= 3) with a reduced scan keeps this fast.
    ok(&cavg(
        &[
            "find-orbits",
            "--lmax",
            "3",
            "--out",
            "lib.txt",
            "--seed",
            "7",
            "--scan-duration",
            "8000",
        ],
        d,
    ));
    let lib = chaotic_averages::orbits::load_library(&d.join("lib.txt")).unwrap();
    assert_eq!(lib.len(), 3);

    ok(&cavg(
        &[
            "snippets",
            "--count",
            "3",
            "--match-library",
            "lib.txt",
            "--out",
            "snip.txt",
            "--seed",
            "7",
        ],
        d,
    ));
    let snips = chaotic_averages::measures::load_snippets(&d.join("snip.txt")).unwrap();
    assert_eq!(snips.len(), 3);

    ok(&cavg(
        &[
            "theta-scan",
            "--library",
            "lib.txt",
            "--grid",
            "1e0:1e4:log5",
            "--out",
            "scan.csv",
        ],
        d,
    ));
    let scan = std::fs::read_to_string(d.join("scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 6); // header + 5 grid points

    ok(&cavg(
        &[
            "build-system",
            "--library",
            "lib.txt",
            "--theta",
            "100",
            "--n",
            "2000",
            "--seed",
            "7",
            "--out",
            "ksys.txt",
        ],
        d,
    ));
    let sys = chaotic_averages::kernel::load_system(&d.join("ksys.txt")).unwrap();
    assert_eq!(sys.p(), 3);

    for method in ["lsw", "nnls", "constrained"] {
        ok(&cavg(
            &[
                "weights",
                "--method",
                method,
                "--system",
                "ksys.txt",
                "--out",
                &format!("w_{method}.txt"),
            ],
            d,
        ));
        let w =
            chaotic_averages::weights::load_weights(&d.join(format!("w_{method}.txt"))).unwrap();
        assert_eq!(w.w.len(), 3);
    }
    ok(&cavg(
        &["weights", "--method", "uniform", "--p", "4", "--out", "w_uniform.txt"],
        d,
    ));
    let wu = chaotic_averages::weights::load_weights(&d.join("w_uniform.txt")).unwrap();
    assert_eq!(wu.w, vec![0.25; 4]);

    ok(&cavg(
        &[
            "weights",
            "--method",
            "markov",
            "--library",
            "lib.txt",
            "--n",
            "2000",
            "--seed",
            "7",
            "--out",
            "w_markov.txt",
        ],
        d,
    ));
    ok(&cavg(
        &[
            "weights",
            "--method",
            "pot",
            "--library",
            "lib.txt",
            "--out",
            "w_pot.txt",
        ],
        d,
    ));

    ok(&cavg(
        &[
            "estimate",
            "--weights",
            "w_lsw.txt",
            "--library",
            "lib.txt",
            "--observables",
            "all",
            "--out",
            "est.csv",
        ],
        d,
    ));
    let est = std::fs::read_to_string(d.join("est.csv")).unwrap();
    assert_eq!(est.lines().count(), 11); // header + 10 observables

    let lyap = cavg(
        &[
            "lyapunov",
            "--weights",
            "w_pot.txt",
            "--library",
            "lib.txt",
            "--reference",
            "0.9057",
        ],
        d,
    );
    ok(&lyap);
    let out = String::from_utf8_lossy(&lyap.stdout);
    assert!(out.contains("lyapunov_estimate"), "{out}");
    assert!(out.contains("absolute_error"), "{out}");
}

#[test]
fn pot_on_incomplete_library_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cavg(
        &[
            "find-orbits",
            "--lmax",
            "3",
            "--out",
            "lib.txt",
            "--seed",
            "7",
            "--scan-duration",
            "8000",
        ],
        d,
    ));
    // Drop one orbit to make the library incomplete (P = 2).
    let lib = chaotic_averages::orbits::load_library(&d.join("lib.txt")).unwrap();
    let partial = chaotic_averages::orbits::OrbitLibrary::new(lib.orbits[..2].to_vec()).unwrap();
    chaotic_averages::orbits::save_library(&partial, &d.join("partial.txt")).unwrap();

    let out = cavg(
        &[
            "weights",
            "--method",
            "pot",
            "--library",
            "partial.txt",
            "--out",
            "w.txt",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.lines().next().unwrap().starts_with("ERROR 2:"),
        "{err}"
    );
    assert!(err.contains("not a complete library size"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = cavg(&["weights", "--method"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().next().unwrap().starts_with("ERROR 1:"), "{err}");

    let out = cavg(&["no-such-verb"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_and_plot_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&cavg(
        &[
            "find-orbits",
            "--lmax",
            "3",
            "--out",
            "lib.txt",
            "--seed",
            "7",
            "--scan-duration",
            "8000",
        ],
        d,
    ));
    std::fs::write(
        d.join("desk.cfg"),
        "library=lib.txt\nout=sweep-out\nseed=11\nP=1,3\nR=3\nS=2\nN=50,200\nbenettin=2000\n",
    )
    .unwrap();
    ok(&cavg(&["sweep", "--config", "desk.cfg"], d));
    assert!(d.join("sweep-out/results.csv").exists());
    assert!(d.join("sweep-out/summary.csv").exists());

    // Identical command, fresh directory: byte-identical outputs.
    std::fs::write(
        d.join("desk2.cfg"),
        "library=lib.txt\nout=sweep-out2\nseed=11\nP=1,3\nR=3\nS=2\nN=50,200\nbenettin=2000\n",
    )
    .unwrap();
    ok(&cavg(&["sweep", "--config", "desk2.cfg"], d));
    let a = std::fs::read(d.join("sweep-out/results.csv")).unwrap();
    let b = std::fs::read(d.join("sweep-out2/results.csv")).unwrap();
    assert_eq!(a, b);

    ok(&cavg(
        &[
            "theta-scan",
            "--library",
            "lib.txt",
            "--grid",
            "1e0:1e4:log5",
            "--out",
            "scan.csv",
        ],
        d,
    ));
    ok(&cavg(
        &[
            "weights",
            "--method",
            "pot",
            "--library",
            "lib.txt",
            "--out",
            "w_pot.txt",
        ],
        d,
    ));
    ok(&cavg(
        &[
            "plot",
            "--from",
            "sweep-out/results.csv",
            "--out-dir",
            "figs",
            "--theta-scan",
            "scan.csv",
            "--weights",
            "w_pot.txt",
            "--library",
            "lib.txt",
        ],
        d,
    ));
    for figure in [
        "error_vs_N_orbit.svg",
        "error_vs_P_orbit.svg",
        "error_vs_N_snippet.svg",
        "theta_scan.svg",
        "weights_vs_lambda.svg",
    ] {
        let path = d.join("figs").join(figure);
        assert!(path.exists(), "missing {figure}");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"), "{figure} is not SVG");
        assert!(text.trim_end().ends_with("</svg>"), "{figure} truncated");
    }
}
