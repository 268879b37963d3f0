//! Property checks shared by the property tests and the acceptance run.
//!
//! Each check drives a seeded proptest runner, so failures reproduce.

use ace_core::ace::{ace_ce_loss, ace_ce_loss_2d, ace_regression_loss, aggregate, counts_from_sequence, ace_ce_workspace_bytes};
use ace_core::bench::{run_bench, BenchSpec};
use ace_core::ctc::{ctc_brute_force, ctc_loss, ctc_workspace_bytes, CtcTarget};
use ace_core::grid::{flatten_2d, LogitGrid, ProbGrid, Shape2d};
use ace_core::softmax::{softmax, softmax_jacobian_apply};
use ace_core::tasks::{apply_shuffle, gen_grids, gen_sequences, GridTaskParams, Layout, Sample, SequenceTaskParams, ShuffleSpec};
use ace_core::train::{train, LossKind, ToyModel, TrainConfig};
use ace_core::{Alphabet, CountAnnotation};
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub type Check = fn() -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("softmax rows sum to one", softmax_rows_sum_to_one),
    ("softmax shift invariance", softmax_shift_invariance),
    ("jacobian output in tangent space", jacobian_tangent_space),
    ("flatten is a bijection", flatten_bijection),
    ("count annotation invariants", count_annotation_invariants),
    ("aggregate sums to T", aggregate_sums_to_t),
    ("ace time permutation invariance", ace_time_permutation_invariance),
    ("gibbs bound", gibbs_bound),
    ("zero-sum gradient rows", zero_sum_gradient_rows),
    ("2d equals flattened 1d", ace_2d_equals_flattened),
    ("ctc equals brute force", ctc_equals_brute_force),
    ("ctc monotone feasibility", ctc_monotone_feasibility),
    ("ctc log-space stability", ctc_log_space_stability),
    ("generation determinism", generation_determinism),
    ("shuffle commutes with counts", shuffle_commutes_with_counts),
    ("training determinism", training_determinism),
    ("ace logs shuffle invariant", ace_logs_shuffle_invariant),
    ("bench workspace scaling", bench_workspace_scaling),
    ("ctc time monotone in seq_len", ctc_time_monotone_in_seq_len),
];

fn runner(cases: u32, seed: u8) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]))
}

fn run<S: Strategy>(
    cases: u32,
    seed: u8,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases, seed).run(&strategy, test).map_err(|e| e.to_string())
}

/// `(T, K, values)` with values drawn from `range`.
fn matrix(t: std::ops::Range<usize>, k: std::ops::Range<usize>, range: std::ops::Range<f64>) -> impl Strategy<Value = Array2<f64>> {
    (t, k).prop_flat_map(move |(t, k)| {
        vec(range.clone(), t * k).prop_map(move |v| Array2::from_shape_vec((t, k), v).unwrap())
    })
}

/// Logits plus a count annotation that fits them.
fn logits_and_counts(t: std::ops::Range<usize>, k: std::ops::Range<usize>) -> impl Strategy<Value = (Array2<f64>, CountAnnotation)> {
    matrix(t, k, -8.0..8.0).prop_flat_map(|m| {
        let (t, k) = m.dim();
        (Just(m), vec(1..k, 0..=t)).prop_map(move |(m, labels)| {
            let ann = CountAnnotation::from_labels(&labels, k, t).unwrap();
            (m, ann)
        })
    })
}

fn probs(m: Array2<f64>) -> ProbGrid {
    softmax(&LogitGrid::new(m).unwrap())
}

pub fn softmax_rows_sum_to_one() -> Result<(), String> {
    run(128, 1, matrix(1..20, 2..60, -1e3..1e3), |m| {
        for row in probs(m).values().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn softmax_shift_invariance() -> Result<(), String> {
    // Dyadic logits and integer shifts keep every a + c exact, so the
    // stabilized softmax must agree bit for bit.
    let dyadic = (1usize..8, 2usize..30).prop_flat_map(|(t, k)| {
        (vec(-160i32..160, t * k), -100i32..=100)
            .prop_map(move |(v, c)| (Array2::from_shape_vec((t, k), v.iter().map(|&x| f64::from(x) / 8.0).collect()).unwrap(), f64::from(c)))
    });
    run(128, 2, dyadic, |(m, c)| {
        let shifted = m.mapv(|a| a + c);
        let (p, q) = (probs(m), probs(shifted));
        prop_assert_eq!(p.values(), q.values());
        Ok(())
    })?;
    run(128, 3, (matrix(1..8, 2..30, -20.0..20.0), -100.0..100.0f64), |(m, c)| {
        let shifted = m.mapv(|a| a + c);
        for (x, y) in probs(m).values().iter().zip(probs(shifted).values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn jacobian_tangent_space() -> Result<(), String> {
    run(256, 4, (2usize..50).prop_flat_map(|k| (vec(-10.0..10.0f64, k), vec(-5.0..5.0f64, k))), |(a, u)| {
        let k = a.len();
        let y = probs(Array2::from_shape_vec((1, k), a).unwrap()).into_values().row(0).to_vec();
        let v = softmax_jacobian_apply(&y, &u).unwrap();
        prop_assert!(v.iter().sum::<f64>().abs() < 1e-12);
        Ok(())
    })
}

pub fn flatten_bijection() -> Result<(), String> {
    run(128, 5, (1usize..15, 1usize..15), |(h, w)| {
        let shape = Shape2d::new(h, w).unwrap();
        let n = (h * w) as f64;
        // Column 0 tags each raster row with its index.
        let tagged = Array2::from_shape_fn((h * w, 2), |(r, c)| if c == 0 { r as f64 / n } else { 1.0 - r as f64 / n });
        let grid = ProbGrid::with_shape(tagged, Some(shape)).unwrap();
        let flat = flatten_2d(&grid).unwrap();
        for (t, &raster) in shape.flatten_order().iter().enumerate() {
            prop_assert_eq!(flat.row(t), grid.row(raster));
            prop_assert_eq!(raster, (t % h) * w + t / h);
        }
        let mut order = shape.flatten_order();
        order.sort_unstable();
        prop_assert_eq!(order, (0..h * w).collect::<Vec<_>>());
        let column = Shape2d::new(h * w, 1).unwrap();
        let twice = flatten_2d(&flat.clone().reshaped(Some(column)).unwrap()).unwrap();
        prop_assert_eq!(twice.values(), flat.values());
        Ok(())
    })
}

pub fn count_annotation_invariants() -> Result<(), String> {
    let alphabet = Alphabet::alphanumeric();
    let symbols: Vec<char> = alphabet.symbols().to_vec();
    let strategy = (vec(0..symbols.len(), 0..20), 0usize..10, any::<u64>());
    run(256, 6, strategy, |(idx, extra, seed)| {
        let s: String = idx.iter().map(|&i| symbols[i]).collect();
        let t = idx.len() + extra + usize::from(idx.is_empty());
        let ann = counts_from_sequence(&s, &alphabet, t).unwrap();
        prop_assert_eq!(ann.counts().iter().sum::<usize>(), t);
        prop_assert_eq!(ann.counts()[0], t - idx.len());
        prop_assert!((ann.normalized().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut chars: Vec<char> = s.chars().collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        chars.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted: String = chars.into_iter().collect();
        prop_assert_eq!(counts_from_sequence(&permuted, &alphabet, t).unwrap(), ann);
        Ok(())
    })
}

pub fn aggregate_sums_to_t() -> Result<(), String> {
    run(128, 7, matrix(1..40, 2..50, -10.0..10.0), |m| {
        let t = m.nrows() as f64;
        let agg = aggregate(&probs(m));
        prop_assert!((agg.sums.iter().sum::<f64>() - t).abs() < 1e-9);
        prop_assert!((agg.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        Ok(())
    })
}

pub fn ace_time_permutation_invariance() -> Result<(), String> {
    run(128, 8, (logits_and_counts(1..30, 2..40), any::<u64>()), |((m, ann), seed)| {
        let p = probs(m.clone());
        let mut order: Vec<usize> = (0..m.nrows()).collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let permuted = probs(m.select(ndarray::Axis(0), &order));
        let (a, b) = (ace_ce_loss(&p, &ann).unwrap().loss, ace_ce_loss(&permuted, &ann).unwrap().loss);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        Ok(())
    })
}

pub fn gibbs_bound() -> Result<(), String> {
    run(256, 9, logits_and_counts(1..30, 2..40), |(m, ann)| {
        let h = ann.entropy();
        prop_assert!(ace_ce_loss(&probs(m), &ann).unwrap().loss >= h - 1e-9);
        // Every row equal to N̄ puts ȳ exactly on N̄.
        let nbar = ann.normalized();
        let grid = ProbGrid::new(Array2::from_shape_fn((ann.total_timesteps(), ann.classes()), |(_, k)| nbar[k])).unwrap();
        prop_assert!((ace_ce_loss(&grid, &ann).unwrap().loss - h).abs() < 1e-10);
        Ok(())
    })
}

pub fn zero_sum_gradient_rows() -> Result<(), String> {
    run(128, 10, logits_and_counts(1..30, 2..60), |(m, ann)| {
        let p = probs(m);
        for g in [ace_ce_loss(&p, &ann).unwrap(), ace_regression_loss(&p, &ann).unwrap()] {
            for row in g.grad_logits.unwrap().rows() {
                prop_assert!(row.sum().abs() < 1e-10);
            }
        }
        let labels: Vec<usize> = ann.counts().iter().enumerate().skip(1).flat_map(|(k, &n)| std::iter::repeat(k).take(n)).collect();
        let target = CtcTarget::new(labels).unwrap();
        if target.min_timesteps() <= p.timesteps() {
            for row in ctc_loss(&p, &target).unwrap().grad_logits.unwrap().rows() {
                prop_assert!(row.sum().abs() < 1e-9);
            }
        }
        Ok(())
    })
}

pub fn ace_2d_equals_flattened() -> Result<(), String> {
    let strategy = (1usize..14, 1usize..14, 2usize..12).prop_flat_map(|(h, w, k)| {
        (Just((h, w)), vec(-6.0..6.0f64, h * w * k), vec(1..k, 0..=h * w)).prop_map(move |(hw, v, labels)| {
            (hw, Array2::from_shape_vec((hw.0 * hw.1, k), v).unwrap(), labels)
        })
    });
    run(128, 11, strategy, |((h, w), m, labels)| {
        let shape = Shape2d::new(h, w).unwrap();
        let ann = CountAnnotation::from_labels(&labels, m.ncols(), h * w).unwrap();
        let grid = softmax(&LogitGrid::with_shape(m, Some(shape)).unwrap());
        let a = ace_ce_loss_2d(&grid, &ann).unwrap();
        let b = ace_ce_loss(&flatten_2d(&grid).unwrap(), &ann).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        let ga = a.grad_logits.unwrap();
        let gb = b.grad_logits.unwrap();
        for (t, &raster) in shape.flatten_order().iter().enumerate() {
            prop_assert_eq!(ga.row(raster), gb.row(t));
        }
        Ok(())
    })
}

fn small_ctc() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (1usize..=6, 2usize..=5).prop_flat_map(|(t, k)| {
        (vec(-4.0..4.0f64, t * k), vec(1..k, 0..=3.min(t)))
            .prop_map(move |(v, labels)| (Array2::from_shape_vec((t, k), v).unwrap(), labels))
    })
}

pub fn ctc_equals_brute_force() -> Result<(), String> {
    run(256, 12, small_ctc(), |(m, labels)| {
        let target = CtcTarget::new(labels).unwrap();
        prop_assume!(target.min_timesteps() <= m.nrows());
        let p = probs(m);
        let fb = ctc_loss(&p, &target).unwrap().loss;
        let bf = ctc_brute_force(&p, &target).unwrap();
        prop_assert!((fb - bf).abs() < 1e-10, "{} vs {}", fb, bf);
        Ok(())
    })
}

/// One-hot grid following a shortest alignment of `labels` padded with blanks.
fn one_hot_alignment(labels: &[usize], t: usize, k: usize) -> ProbGrid {
    let mut path = Vec::with_capacity(t);
    for (i, &l) in labels.iter().enumerate() {
        if i > 0 && labels[i - 1] == l {
            path.push(0);
        }
        path.push(l);
    }
    path.resize(t, 0);
    ProbGrid::new(Array2::from_shape_fn((t, k), |(r, c)| if path[r] == c { 1.0 } else { 0.0 })).unwrap()
}

pub fn ctc_monotone_feasibility() -> Result<(), String> {
    run(128, 13, (2usize..6, vec(1usize..5, 0..5), 0usize..4), |(k, labels, slack)| {
        let labels: Vec<usize> = labels.into_iter().map(|l| 1 + (l - 1) % (k - 1)).collect();
        let target = CtcTarget::new(labels.clone()).unwrap();
        let t = target.min_timesteps().max(1) + slack;
        // Best achievable loss at T and T + 1 from the best one-hot alignment,
        // cross-checked on the enumerable sizes.
        let at_t = ctc_loss(&one_hot_alignment(&labels, t, k), &target).unwrap().loss;
        let at_t1 = ctc_loss(&one_hot_alignment(&labels, t + 1, k), &target).unwrap().loss;
        prop_assert!(at_t1 <= at_t);
        prop_assert!(at_t.abs() < 1e-12);
        if t < 8 {
            let bf = ctc_brute_force(&one_hot_alignment(&labels, t + 1, k), &target).unwrap();
            prop_assert!((bf - at_t1).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn ctc_log_space_stability() -> Result<(), String> {
    let strategy = (1usize..40, 2usize..12).prop_flat_map(|(t, k)| {
        (vec(-50.0..50.0f64, t * k), vec(1..k, 0..=6.min(t)))
            .prop_map(move |(v, labels)| (Array2::from_shape_vec((t, k), v).unwrap(), labels))
    });
    run(128, 14, strategy, |(m, labels)| {
        let target = CtcTarget::new(labels).unwrap();
        prop_assume!(target.min_timesteps() <= m.nrows());
        let lg = ctc_loss(&probs(m), &target).unwrap();
        prop_assert!(lg.loss.is_finite());
        prop_assert!(lg.grad_logits.unwrap().iter().all(|v| v.is_finite()));
        Ok(())
    })
}

pub fn generation_determinism() -> Result<(), String> {
    let alphabet = Alphabet::digits();
    run(24, 15, (any::<u64>(), 1usize..25, 0usize..10, 0.0..0.5f64), |(seed, t, len, noise)| {
        let params = SequenceTaskParams { seed, count: 6, timesteps: t, max_len: len.min(t), noise_sigma: noise };
        let a = gen_sequences(&params, &alphabet).unwrap();
        prop_assert_eq!(&a, &gen_sequences(&params, &alphabet).unwrap());
        for s in &a {
            prop_assert_eq!(s.counts(&alphabet).unwrap().counts().iter().sum::<usize>(), t);
        }
        let (h, w) = (1 + t % 5, 1 + len % 6);
        let gp = GridTaskParams { seed, count: 6, height: h, width: w, max_objects: (h * w).min(len), layout: Layout::Curve, noise_sigma: noise };
        let g = gen_grids(&gp, &alphabet).unwrap();
        prop_assert_eq!(&g, &gen_grids(&gp, &alphabet).unwrap());
        for s in &g {
            let counts = s.counts(&alphabet).unwrap();
            prop_assert_eq!(counts.counts().iter().sum::<usize>(), h * w);
            prop_assert_eq!(counts, s.placement_counts(alphabet.len()).unwrap());
        }
        Ok(())
    })
}

pub fn shuffle_commutes_with_counts() -> Result<(), String> {
    let alphabet = Alphabet::digits();
    run(32, 16, (any::<u64>(), 0.0..=1.0f64), |(seed, ratio)| {
        let params = SequenceTaskParams { seed, count: 20, timesteps: 12, max_len: 8, noise_sigma: 0.1 };
        let data = gen_sequences(&params, &alphabet).unwrap();
        let shuffled = apply_shuffle(&data, ShuffleSpec::new(ratio).unwrap(), seed ^ 1);
        prop_assert_eq!(&shuffled, &apply_shuffle(&data, ShuffleSpec::new(ratio).unwrap(), seed ^ 1));
        for (a, b) in data.iter().zip(&shuffled) {
            prop_assert_eq!(&a.features, &b.features);
            prop_assert_eq!(a.counts(&alphabet).unwrap(), b.counts(&alphabet).unwrap());
        }
        Ok(())
    })
}

fn tiny_sequences(seed: u64) -> Vec<ace_core::tasks::SequenceSample> {
    let params = SequenceTaskParams { seed, count: 30, timesteps: 10, max_len: 4, noise_sigma: 0.2 };
    gen_sequences(&params, &Alphabet::digits()).unwrap()
}

pub fn training_determinism() -> Result<(), String> {
    let alphabet = Alphabet::digits();
    run(6, 17, (any::<u64>(), prop_oneof![Just(LossKind::AceCe), Just(LossKind::AceRegression), Just(LossKind::Ctc)]), |(seed, loss)| {
        let data = tiny_sequences(seed);
        let config = TrainConfig { epochs: 2, seed, ..TrainConfig::new(loss) };
        let model = ToyModel::new(11, 11, Some(6), 0.5, seed).unwrap();
        let a = train(&config, &data, None, &alphabet, model.clone()).unwrap();
        let b = train(&config, &data, None, &alphabet, model).unwrap();
        prop_assert_eq!(a.model.params(), b.model.params());
        prop_assert_eq!(a.log, b.log);
        Ok(())
    })
}

pub fn ace_logs_shuffle_invariant() -> Result<(), String> {
    let alphabet = Alphabet::digits();
    run(4, 18, any::<u64>(), |seed| {
        let data = tiny_sequences(seed);
        let eval = tiny_sequences(seed ^ 0xff);
        let config = TrainConfig { epochs: 3, seed, ..TrainConfig::new(LossKind::AceCe) };
        let model = ToyModel::new(11, 11, None, 0.1, seed).unwrap();
        let base = train(&config, &data, Some(&eval), &alphabet, model.clone()).unwrap();
        for ratio in [0.25, 0.5, 0.75, 1.0] {
            let shuffled = apply_shuffle(&data, ShuffleSpec::new(ratio).unwrap(), seed);
            let run = train(&config, &shuffled, Some(&eval), &alphabet, model.clone()).unwrap();
            prop_assert_eq!(&run.log, &base.log);
            prop_assert_eq!(run.model.params(), base.model.params());
        }
        Ok(())
    })
}

pub fn bench_workspace_scaling() -> Result<(), String> {
    for t in [16usize, 64, 144, 512] {
        for k in [11usize, 37, 1000, 7357] {
            for s in [1usize, 5, 20] {
                // ACE: K doubles plus one pair per present class, whatever T is.
                let present = s + 1;
                if ace_ce_workspace_bytes(k, present) != 8 * k + 16 * present {
                    return Err(format!("ACE workspace at T={t}, K={k}"));
                }
                if ctc_workspace_bytes(t, s) != 16 * t * (2 * s + 1) {
                    return Err(format!("CTC workspace at T={t}, S={s}"));
                }
            }
        }
    }
    let mut spec = BenchSpec::new(20, 9, 4, 4);
    spec.repeats = 1;
    spec.warmup = 0;
    for t in [20usize, 80] {
        spec.timesteps = t;
        let results = run_bench(&spec).map_err(|e| e.to_string())?;
        if results.iter().any(|r| r.params != 0) {
            return Err("a loss reported parameters".into());
        }
        let ace = results[0].aux_bytes;
        if ace < 4 * 8 * 9 || ace > 4 * ace_ce_workspace_bytes(9, 5) {
            return Err(format!("ACE workspace {ace} at T={t}"));
        }
        if results[2].aux_bytes != 4 * ctc_workspace_bytes(t, 4) {
            return Err(format!("CTC workspace {} at T={t}", results[2].aux_bytes));
        }
    }
    Ok(())
}

pub fn ctc_time_monotone_in_seq_len() -> Result<(), String> {
    let mut medians = Vec::new();
    for s in [4usize, 20, 60] {
        let mut spec = BenchSpec::new(144, 37, 16, s);
        spec.repeats = 9;
        let inputs = ace_core::bench::make_inputs(&spec).map_err(|e| e.to_string())?;
        let r = ace_core::bench::bench_loss(LossKind::Ctc, &spec, &inputs).map_err(|e| e.to_string())?;
        medians.push(r.median_ms);
    }
    if medians.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(format!("CTC medians not monotone in seq_len: {medians:?}"))
    }
}
