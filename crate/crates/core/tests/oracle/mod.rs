//! Independent reference implementations used by the property tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use embryocap::dataset::{FrameRecord, Manifest, Split, SplitSpec, StratifyBy, SubsetTag};

/// Composite score written straight from the formula, in plain f64.
pub fn brute_composite(er: i64, ecc: i64, md: i64, pd: i64, alpha: f64, beta: f64, gamma: f64) -> f64 {
    if er == 0 {
        return 0.0;
    }
    let ecc_term = alpha * (ecc as f64 / 3.0);
    let md_term = beta * (md as f64 / 4.0);
    if pd == -1 {
        (ecc_term + md_term) / (alpha + beta)
    } else {
        (ecc_term + md_term + gamma * (pd as f64 / 3.0)) / (alpha + beta + gamma)
    }
}

/// Default-weight composite as an unreduced fraction over a common denominator:
/// 4/3·ecc + 2/4·md + 1/3·pd over 7 becomes (16ecc + 6md + 4pd) / 84.
pub fn default_composite_fraction(er: i64, ecc: i64, md: i64, pd: i64) -> (i64, i64) {
    match (er, pd) {
        (0, _) => (0, 1),
        (_, -1) => (16 * ecc + 6 * md, 72),
        _ => (16 * ecc + 6 * md + 4 * pd, 84),
    }
}

pub fn all_tuples() -> Vec<(i64, i64, i64, i64)> {
    let mut out = Vec::new();
    for er in 0..=1 {
        for ecc in 0..=3 {
            for md in 0..=4 {
                for pd in -1..=3 {
                    out.push((er, ecc, md, pd));
                }
            }
        }
    }
    out
}

/// Two-pass mean and sample standard deviation (n-1; 0 when n == 1).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Every allocation of `total` over strata whose counts stay strictly within
/// one frame of the proportional share and fit each stratum.
pub fn admissible_allocations(sizes: &[usize], total: usize) -> Vec<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    let mut out = Vec::new();
    fn go(i: usize, sizes: &[usize], n: usize, total: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == sizes.len() {
            if acc.iter().sum::<usize>() == total {
                out.push(acc.clone());
            }
            return;
        }
        for k in 0..=sizes[i] {
            // |k - sizes[i]*total/n| < 1, compared in integers.
            let lhs = (k * n) as i64 - (sizes[i] * total) as i64;
            if lhs.unsigned_abs() < n as u64 {
                acc.push(k);
                go(i + 1, sizes, n, total, acc, out);
                acc.pop();
            }
        }
    }
    go(0, sizes, n, total, &mut Vec::new(), &mut out);
    out
}

fn stratum_key(f: &FrameRecord, by: StratifyBy) -> String {
    match by {
        StratifyBy::Ecc => f.ecc.as_str().to_string(),
        StratifyBy::Mv => f.mv.as_str().to_string(),
    }
}

/// Checks partition, stratification bound, subset sizes and nesting.
pub fn check_split(input: &Manifest, output: &Manifest, spec: &SplitSpec) -> Result<(), String> {
    let ids_in: BTreeSet<&str> = input.frames().iter().map(|f| f.frame_id.as_str()).collect();
    let ids_out: BTreeSet<&str> = output.frames().iter().map(|f| f.frame_id.as_str()).collect();
    if ids_in != ids_out {
        return Err("frame set changed".into());
    }
    let n = input.frames().len();
    let mut strata: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut test = 0;
    for f in output.frames() {
        let e = strata.entry(stratum_key(f, spec.stratify_by)).or_default();
        e.0 += 1;
        match f.split {
            Split::Test => {
                test += 1;
                e.1 += 1;
                if !f.subset_tags.is_empty() {
                    return Err(format!("test frame {} carries tags", f.frame_id));
                }
            }
            Split::Train => {}
            Split::Unassigned => return Err(format!("frame {} left unassigned", f.frame_id)),
        }
    }
    if test != spec.test_count {
        return Err(format!("test count {test} != {}", spec.test_count));
    }
    for (key, (size, k)) in &strata {
        let dev = (k * n) as i64 - (size * spec.test_count) as i64;
        if dev.unsigned_abs() > n as u64 {
            return Err(format!("stratum {key}: {k} of {size} in test"));
        }
    }
    let mut previous: Option<BTreeSet<&str>> = None;
    for &size in &spec.subset_sizes {
        let tag = SubsetTag(size);
        let members: BTreeSet<&str> = output
            .frames()
            .iter()
            .filter(|f| f.subset_tags.contains(&tag))
            .map(|f| f.frame_id.as_str())
            .collect();
        if members.len() != size {
            return Err(format!("{tag} has {} members", members.len()));
        }
        if let Some(prev) = &previous {
            if !prev.is_subset(&members) {
                return Err(format!("{tag} does not contain the smaller subset"));
            }
        }
        previous = Some(members);
    }
    Ok(())
}
