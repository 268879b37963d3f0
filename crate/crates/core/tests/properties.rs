#[path = "common/invariants.rs"]
mod invariants;

macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = invariants::$name() {
                    panic!("{e}");
                }
            }
        )*
    };
}

checks!(
    softmax_rows_sum_to_one,
    softmax_shift_invariance,
    jacobian_tangent_space,
    flatten_bijection,
    count_annotation_invariants,
    aggregate_sums_to_t,
    ace_time_permutation_invariance,
    gibbs_bound,
    zero_sum_gradient_rows,
    ace_2d_equals_flattened,
    ctc_equals_brute_force,
    ctc_monotone_feasibility,
    ctc_log_space_stability,
    generation_determinism,
    shuffle_commutes_with_counts,
    training_determinism,
    ace_logs_shuffle_invariant,
    bench_workspace_scaling,
    ctc_time_monotone_in_seq_len,
);

#[test]
fn every_check_is_listed() {
    assert_eq!(invariants::ALL.len(), 19);
}
