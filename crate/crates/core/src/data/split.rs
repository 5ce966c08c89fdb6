//! Iterative stratification for multi-label data.

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, SparseBinaryMatrix};

pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.10, 0.20];

/// Train, dev and test partitions of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&Dataset> {
        match name {
            "train" => Some(&self.train),
            "dev" => Some(&self.dev),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

/// Integer split sizes by largest remainder; they sum to `n`.
pub fn split_sizes(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for k in 0..3 {
        sizes[k] = exact[k].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    // Remainders are compared at 1e-9 so float noise cannot break ties.
    let rem = |k: usize| ((exact[k] - exact[k].floor()) * 1e9).round() as i64;
    order.sort_by(|&a, &b| rem(b).cmp(&rem(a)).then(a.cmp(&b)));
    let mut left = n - sizes.iter().sum::<usize>();
    for k in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[k] += 1;
        left -= 1;
    }
    sizes
}

fn check_ratios(ratios: &[f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

/// Assigns each row of `y` to split 0, 1 or 2. Rarest labels are placed
/// first; each example goes to the open split that most wants its label,
/// then the one with most room left, then a seeded coin. Splits never exceed
/// their [`split_sizes`]. Afterwards every label with at least three
/// occurrences is swapped into split 0 if it ended up absent there.
pub fn split_assignment(y: &SparseBinaryMatrix, ratios: &[f64; 3], seed: u64) -> Result<Vec<usize>> {
    check_ratios(ratios)?;
    let n = y.rows();
    if n == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut capacity = split_sizes(n, ratios);
    let n_labels = y.cols();

    let mut examples: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for i in 0..n {
        for &j in y.row(i) {
            examples[j as usize].push(i);
        }
    }
    let mut desired: Vec<[f64; 3]> = examples
        .iter()
        .map(|e| [0, 1, 2].map(|k| e.len() as f64 * ratios[k]))
        .collect();
    let mut remaining: Vec<usize> = examples.iter().map(Vec::len).collect();
    let mut assigned: Vec<Option<usize>> = vec![None; n];

    loop {
        let label = (0..n_labels).filter(|&j| remaining[j] > 0).min_by_key(|&j| (remaining[j], j));
        let Some(label) = label else { break };
        let mut batch: Vec<usize> = examples[label].iter().copied().filter(|&i| assigned[i].is_none()).collect();
        rng.shuffle(&mut batch);
        for i in batch {
            let want = desired[label];
            let open: Vec<usize> = (0..3).filter(|&k| capacity[k] > 0).collect();
            let best = open
                .iter()
                .map(|&k| want[k])
                .fold(f64::NEG_INFINITY, f64::max);
            let top: Vec<usize> = open.iter().copied().filter(|&k| want[k] == best).collect();
            let most_room = top.iter().map(|&k| capacity[k]).max().unwrap_or(0);
            let top: Vec<usize> = top.into_iter().filter(|&k| capacity[k] == most_room).collect();
            let k = if top.len() == 1 { top[0] } else { top[rng.below(top.len())] };
            assigned[i] = Some(k);
            capacity[k] -= 1;
            for &j in y.row(i) {
                desired[j as usize][k] -= 1.0;
                remaining[j as usize] -= 1;
            }
        }
    }

    // Rows without labels fill whatever room is left.
    let mut unlabeled: Vec<usize> = (0..n).filter(|&i| assigned[i].is_none()).collect();
    rng.shuffle(&mut unlabeled);
    for i in unlabeled {
        let k = (0..3).max_by_key(|&k| (capacity[k], std::cmp::Reverse(k))).expect("three splits");
        assigned[i] = Some(k);
        capacity[k] -= 1;
    }

    let mut assignment: Vec<usize> = assigned.into_iter().map(|a| a.expect("all rows placed")).collect();
    ensure_train_coverage(y, &mut assignment, &mut rng);
    Ok(assignment)
}

/// Swaps rows so each label seen at least three times appears in split 0,
/// without removing the last split-0 instance of any other such label.
fn ensure_train_coverage(y: &SparseBinaryMatrix, assignment: &mut [usize], rng: &mut SeededRng) {
    let totals = y.column_counts();
    let mut train_counts = vec![0usize; y.cols()];
    for (i, &k) in assignment.iter().enumerate() {
        if k == 0 {
            for &j in y.row(i) {
                train_counts[j as usize] += 1;
            }
        }
    }
    for label in 0..y.cols() {
        if totals[label] < 3 || train_counts[label] > 0 || !assignment.contains(&0) {
            continue;
        }
        let mut donors: Vec<usize> = (0..assignment.len())
            .filter(|&i| assignment[i] != 0 && y.contains(i, label as u32))
            .collect();
        donors.sort_by_key(|&i| y.row(i).len());
        let mut train_rows: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == 0).collect();
        rng.shuffle(&mut train_rows);
        // Prefer evicting rows with few labels.
        train_rows.sort_by_key(|&i| y.row(i).len());
        let protected = |i: usize, counts: &[usize]| {
            y.row(i).iter().any(|&j| totals[j as usize] >= 3 && counts[j as usize] <= 1)
        };
        let Some(&out) = train_rows.iter().find(|&&i| !protected(i, &train_counts)) else {
            log::warn!("could not move label {label} into the training split");
            continue;
        };
        let inn = donors[0];
        assignment.swap(out, inn);
        for &j in y.row(out) {
            train_counts[j as usize] -= 1;
        }
        for &j in y.row(inn) {
            train_counts[j as usize] += 1;
        }
    }
}

/// Seeded iterative-stratification split of `ds` into train/dev/test.
pub fn stratified_split(ds: &Dataset, ratios: &[f64; 3], seed: u64) -> Result<Splits> {
    let assignment = split_assignment(&ds.y, ratios, seed)?;
    let mut rows: [Vec<usize>; 3] = Default::default();
    for (i, &k) in assignment.iter().enumerate() {
        rows[k].push(i);
    }
    Ok(Splits {
        train: ds.select(&rows[0]),
        dev: ds.select(&rows[1]),
        test: ds.select(&rows[2]),
    })
}
