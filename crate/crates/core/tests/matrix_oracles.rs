use coevo_core::matrix::{build_matrix, gf2_rank, rank, read_matrix_file, signatures, MatrixError, PassingMatrix};
use coevo_testkit::{distinct_rows, matrix_rows, random_matrix, random_permutation, rational_rank, transpose};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bits() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(any::<bool>(), m), n))
}

#[test]
fn rank_matches_rational_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3000 {
        let m = random_matrix(&mut rng, 8, 8);
        assert_eq!(rank(&m), rational_rank(&matrix_rows(&m)), "{:?}", matrix_rows(&m));
    }
}

#[test]
fn rank_of_wide_and_tall_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (n, m) in [(1, 40), (40, 1), (12, 30), (30, 12)] {
        let rows: Vec<Vec<bool>> = (0..n).map(|_| (0..m).map(|_| rand::Rng::random_bool(&mut rng, 0.5)).collect()).collect();
        let mat = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        assert_eq!(rank(&mat), rational_rank(&rows));
    }
}

#[test]
fn rank_over_q_can_exceed_rank_over_gf2() {
    // rows sum to 2·(1,1,1) over Q but to zero over GF(2)
    let m = PassingMatrix::from_bitstrings("p", &["110", "011", "101"]).unwrap();
    assert_eq!(rank(&m), 3);
    assert_eq!(gf2_rank(&m), 2);
}

#[test]
fn large_hadamard_like_matrix_uses_exact_arithmetic() {
    // Sylvester construction mapped to 0/1; rank of the 0/1 version of H_64 is 64.
    let n = 64;
    let rows: Vec<Vec<bool>> = (0..n)
        .map(|i: usize| (0..n).map(|j: usize| (i & j).count_ones().is_multiple_of(2)).collect())
        .collect();
    let m = PassingMatrix::from_bool_rows("h", &rows).unwrap();
    assert_eq!(rank(&m), 64);
    let dup: Vec<Vec<bool>> = rows.iter().chain(rows.iter().take(5)).cloned().collect();
    assert_eq!(rank(&PassingMatrix::from_bool_rows("h2", &dup).unwrap()), 64);
}

#[test]
fn build_matrix_is_order_independent_up_to_relabeling() {
    let triples = vec![
        ("a", "x", true),
        ("a", "y", false),
        ("b", "x", false),
        ("b", "y", true),
        ("c", "x", true),
        ("c", "y", true),
    ];
    let m1 = build_matrix("p", triples.clone()).unwrap();
    let mut rev = triples;
    rev.reverse();
    let m2 = build_matrix("p", rev).unwrap();
    for (i, s) in m1.solution_ids().iter().enumerate() {
        let i2 = m2.solution_ids().iter().position(|x| x == s).unwrap();
        for (j, t) in m1.test_ids().iter().enumerate() {
            let j2 = m2.test_ids().iter().position(|x| x == t).unwrap();
            assert_eq!(m1.get(i, j), m2.get(i2, j2));
        }
    }
    assert!(matches!(
        build_matrix("p", vec![("a", "x", true), ("b", "y", true)]),
        Err(MatrixError::MissingPair { .. })
    ));
}

#[test]
fn matrix_file_errors_name_their_line() {
    let text = concat!(
        r#"{"problem_id":"p1","solutions":["s0","s1"],"tests":["t0"],"rows":["1","0"]}"#,
        "\n\n",
        r#"{"problem_id":"p2","solutions":["s0"],"tests":["t0","t1"],"rows":["101"]}"#,
        "\n"
    );
    let err = read_matrix_file(text.as_bytes()).unwrap_err();
    assert_eq!(err.line(), 3);
    let bad_bit = r#"{"problem_id":"p","solutions":["s0"],"tests":["t0"],"rows":["x"]}"#;
    assert_eq!(read_matrix_file(bad_bit.as_bytes()).unwrap_err().line(), 1);
    let extra = r#"{"problem_id":"p","solutions":["s0"],"tests":["t0"],"rows":["1"],"extra":1}"#;
    assert!(read_matrix_file(extra.as_bytes()).is_err());
    assert!(read_matrix_file("".as_bytes()).unwrap().is_empty());
}

#[test]
fn record_round_trip() {
    let m = PassingMatrix::from_bitstrings("p9", &["1010", "0110", "1111"]).unwrap();
    let line = serde_json::to_string(&m.to_record()).unwrap();
    let back = read_matrix_file(line.as_bytes()).unwrap();
    assert_eq!(back, vec![m]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn rank_permutation_invariant(rows in bits(), seed in any::<u64>()) {
        let m = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pr = random_permutation(&mut rng, m.n_solutions());
        let pc = random_permutation(&mut rng, m.n_tests());
        prop_assert_eq!(rank(&m.permute_rows(&pr).permute_columns(&pc)), rank(&m));
    }

    #[test]
    fn rank_bounded_by_distinct_rows_and_columns(rows in bits()) {
        let m = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        let r = rank(&m);
        prop_assert!(r <= distinct_rows(&rows));
        prop_assert!(r <= distinct_rows(&transpose(&rows)));
        prop_assert!(gf2_rank(&m) <= r);
    }

    #[test]
    fn duplicating_a_row_keeps_rank(rows in bits(), pick in any::<prop::sample::Index>()) {
        let m = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        let mut more = rows.clone();
        more.push(rows[pick.index(rows.len())].clone());
        prop_assert_eq!(rank(&PassingMatrix::from_bool_rows("p", &more).unwrap()), rank(&m));
    }

    #[test]
    fn signatures_partition_rows(rows in bits()) {
        let m = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        let groups = signatures(&m);
        let mut seen = vec![false; rows.len()];
        for g in &groups {
            for &i in &g.member_indices {
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(&rows[i], &g.bits);
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert_eq!(groups.len(), distinct_rows(&rows));
    }

    #[test]
    fn row_sums_recount(rows in bits()) {
        let m = PassingMatrix::from_bool_rows("p", &rows).unwrap();
        for (i, r) in rows.iter().enumerate() {
            prop_assert_eq!(m.row_sum(i), r.iter().filter(|&&b| b).count());
        }
    }
}
