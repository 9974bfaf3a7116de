//! Independent oracles, generators and a scripted execution backend for the
//! coevo test suites. Nothing here calls the library routine it is meant to
//! check.

use std::io::Write;

use coevo_core::matrix::PassingMatrix;
use coevo_core::selectors::{select_b4, PriorConfig, QuadrantCounts, Tally};
use num_rational::Ratio;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Rank over Q by plain Gaussian elimination on reduced fractions.
#[allow(clippy::needless_range_loop)]
pub fn rational_rank(rows: &[Vec<bool>]) -> usize {
    let mut a: Vec<Vec<Ratio<i128>>> = rows
        .iter()
        .map(|r| r.iter().map(|&b| Ratio::from_integer(b as i128)).collect())
        .collect();
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    let zero = Ratio::from_integer(0);
    let mut rank = 0;
    for col in 0..m {
        let Some(p) = (rank..n).find(|&r| a[r][col] != zero) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][col];
        for r in 0..n {
            if r != rank && a[r][col] != zero {
                let f = a[r][col] / pivot;
                for c in col..m {
                    let v = a[rank][c] * f;
                    a[r][c] -= v;
                }
            }
        }
        rank += 1;
    }
    rank
}

pub fn matrix_rows(m: &PassingMatrix) -> Vec<Vec<bool>> {
    (0..m.n_solutions())
        .map(|i| (0..m.n_tests()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn distinct_rows(rows: &[Vec<bool>]) -> usize {
    let mut seen: Vec<&Vec<bool>> = Vec::new();
    for r in rows {
        if !seen.contains(&r) {
            seen.push(r);
        }
    }
    seen.len()
}

pub fn transpose(rows: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let m = rows.first().map_or(0, Vec::len);
    (0..m).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Quadrant tallies for a labeling given as index sets.
pub fn quadrant_counts(m: &PassingMatrix, sols: &[usize], tests: &[usize]) -> QuadrantCounts {
    let mut q = QuadrantCounts::default();
    for i in 0..m.n_solutions() {
        for j in 0..m.n_tests() {
            let cell: &mut Tally = match (sols.contains(&i), tests.contains(&j)) {
                (true, true) => &mut q.both,
                (false, false) => &mut q.neither,
                (true, false) => &mut q.solution_only,
                (false, true) => &mut q.test_only,
            };
            if m.get(i, j) {
                cell.pass += 1;
            } else {
                cell.fail += 1;
            }
        }
    }
    q
}

/// `ln B(x0 + p, y0 + f)` when one of `x0`, `y0` equals 1, via
/// `B(1, y) = 1/y` and the unit-step recurrences
/// `B(x+1, y) = B(x, y)·x/(x+y)`, `B(x, y+1) = B(x, y)·y/(x+y)`.
pub fn ln_beta_unit_recurrence(x0: f64, y0: f64, p: u64, f: u64) -> f64 {
    assert!(x0 == 1.0 || y0 == 1.0, "base needs a unit parameter");
    let mut l = -(x0.max(y0)).ln();
    let (mut x, mut y) = (x0, y0);
    for _ in 0..p {
        l += x.ln() - (x + y).ln();
        x += 1.0;
    }
    for _ in 0..f {
        l += y.ln() - (x + y).ln();
        y += 1.0;
    }
    l
}

/// B4 log score: quadrant 1 `Beta(1,1)`, quadrant 0 `Beta(1, beta0)`,
/// quadrants x and y `Beta(alpha_xy, 1)`.
pub fn b4_score_oracle(q: &QuadrantCounts, beta0: f64, alpha_xy: f64) -> f64 {
    ln_beta_unit_recurrence(1.0, 1.0, q.both.pass, q.both.fail)
        + ln_beta_unit_recurrence(1.0, beta0, q.neither.pass, q.neither.fail)
        + ln_beta_unit_recurrence(alpha_xy, 1.0, q.solution_only.pass, q.solution_only.fail)
        + ln_beta_unit_recurrence(alpha_xy, 1.0, q.test_only.pass, q.test_only.fail)
}

/// Random 0/1 matrix of size `1..=max_n × 1..=max_m`, drawn from one of
/// several shapes: i.i.d. bits at a random density, copies of a few
/// prototype rows, prototypes with flipped bits, or a sparse block.
pub fn random_matrix(rng: &mut ChaCha8Rng, max_n: usize, max_m: usize) -> PassingMatrix {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let rows: Vec<Vec<bool>> = match rng.random_range(0..4) {
        0 => {
            let p = [0.2, 0.5, 0.8][rng.random_range(0..3)];
            (0..n).map(|_| (0..m).map(|_| rng.random_bool(p)).collect()).collect()
        }
        1 | 2 => {
            let k = rng.random_range(1..=3);
            let protos: Vec<Vec<bool>> = (0..k).map(|_| (0..m).map(|_| rng.random_bool(0.6)).collect()).collect();
            let flip = if rng.random_bool(0.5) { 0.1 } else { 0.0 };
            (0..n)
                .map(|_| {
                    let p = &protos[rng.random_range(0..k)];
                    p.iter().map(|&b| b ^ rng.random_bool(flip)).collect()
                })
                .collect()
        }
        _ => (0..n).map(|_| (0..m).map(|_| rng.random_bool(0.1)).collect()).collect(),
    };
    PassingMatrix::from_bool_rows("rand", &rows).expect("non-empty matrix")
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v
}

/// Grid argmax by a double loop over exponents `u ∈ 0..=9`, `v ∈ 0..=7`.
/// Only a strictly better accuracy replaces the incumbent, so ties keep the
/// smaller `u`, then the smaller `v`.
pub fn calibration_recount<F>(matrices: &[PassingMatrix], verdict: F) -> ((i32, i32), f64, Vec<f64>)
where
    F: Fn(&str, usize) -> bool,
{
    let mut best = ((0, 0), f64::NEG_INFINITY);
    let mut surface = Vec::new();
    for u in 0..=9 {
        for v in 0..=7 {
            let prior = PriorConfig::new(10f64.powi(u), 10f64.powi(v)).expect("positive prior");
            let hits = matrices
                .iter()
                .filter(|m| verdict(m.problem_id(), select_b4(m, &prior).solution_indices[0]))
                .count();
            let acc = hits as f64 / matrices.len() as f64;
            surface.push(acc);
            if acc > best.1 {
                best = ((u, v), acc);
            }
        }
    }
    (best.0, best.1, surface)
}

/// One-sided exact sign test: `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut choose = 1.0_f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += choose;
        }
        choose = choose * (n - k) as f64 / (k + 1) as f64;
    }
    tail / 2f64.powi(n as i32)
}

/// A Python backend speaking the line-delimited execution protocol.
///
/// Solution texts `pass`, `fail` and `error` answer with that status. The
/// solution `hang` is held back and only answered once the following batch
/// has been answered, so it times out and its late answer must be dropped.
/// Modes: `echo` answers each request at once; `reverse` collects `batch`
/// requests and answers them last-first; `garbage` answers with a non-JSON
/// line; `unknown` answers with an id that was never sent; `exit` quits on
/// the first request.
pub struct ScriptedBackend {
    _dir: tempfile::TempDir,
    pub command: String,
}

const DOUBLE: &str = r#"
import json, sys
mode = sys.argv[1]
batch = int(sys.argv[2])
held, late, stale = [], [], []
def answer(req):
    s = req["solution"]
    status = s if s in ("pass", "fail", "error") else "pass"
    sys.stdout.write(json.dumps({"id": req["id"], "status": status}) + "\n")
for line in sys.stdin:
    req = json.loads(line)
    if mode == "exit":
        sys.exit(0)
    if mode == "garbage":
        sys.stdout.write("this is not json\n"); sys.stdout.flush(); continue
    if mode == "unknown":
        sys.stdout.write(json.dumps({"id": "never-sent", "status": "pass"}) + "\n"); sys.stdout.flush(); continue
    if req["solution"] == "hang":
        late.append(req); continue
    held.append(req)
    if len(held) >= batch:
        for r in reversed(held):
            answer(r)
        held = []
        for r in stale:
            answer(r)
        stale, late = late, []
    sys.stdout.flush()
"#;

pub fn scripted_backend(mode: &str, batch: usize) -> ScriptedBackend {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("double.py");
    let mut f = std::fs::File::create(&path).expect("script file");
    f.write_all(DOUBLE.as_bytes()).expect("write script");
    let command = format!("python3 -u '{}' {mode} {batch}", path.display());
    ScriptedBackend { _dir: dir, command }
}
