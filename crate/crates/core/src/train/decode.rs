use crate::alphabet::{Alphabet, BLANK};
use crate::grid::{flatten_2d, ProbGrid};

/// Per-timestep argmax, ties resolved toward the lowest class index.
pub fn argmax_path(probs: &ProbGrid) -> Vec<usize> {
    probs
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Merge runs of equal labels, then drop blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != BLANK {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Best-path decoding. Grids are flattened column-major first.
pub fn greedy_decode(probs: &ProbGrid, alphabet: &Alphabet) -> String {
    let path = match probs.shape2d() {
        Some(_) => argmax_path(&flatten_2d(probs).expect("grid has 2D provenance")),
        None => argmax_path(probs),
    };
    alphabet.decode(&collapse_path(&path))
}
