use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub split_seed: u64,
}

/// Seeded shuffle followed by largest-remainder apportioning of the
/// `(train, validation, test)` fractions.
pub fn split_dataset(ids: &[String], split_seed: u64, fractions: [f64; 3]) -> Result<DatasetSplit> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    if ids.len() < wanted {
        return Err(Error::Data(format!(
            "{} scenes cannot fill {wanted} splits",
            ids.len()
        )));
    }

    let n = ids.len();
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    // every requested split gets at least one scene
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let test = shuffled.split_off(counts[0] + counts[1]);
    let validation = shuffled.split_off(counts[0]);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        split_seed,
    })
}
