mod oracle;

use std::time::Instant;

use embryocap::dataset::{self, FrameRecord, Manifest, ManifestHeader, SplitSpec, StratifyBy};
use embryocap::labels::{EccLabel, MorphokineticVariable as Mv};
use embryocap::rng::SeededRng;

const ECCS: [EccLabel; 7] = [
    EccLabel::Oocyte,
    EccLabel::Zygote,
    EccLabel::Ecc1,
    EccLabel::Ecc2,
    EccLabel::Ecc3,
    EccLabel::Morula,
    EccLabel::Blastocyst,
];

fn synthetic(rng: &mut SeededRng, n: usize, strata: usize) -> Manifest {
    let frames = (0..n)
        .map(|i| {
            let ecc = ECCS[rng.below(strata as u64) as usize];
            let mv = Mv::ALL[rng.below(Mv::ALL.len() as u64) as usize];
            FrameRecord::new(
                format!("W{}_F{i:04}", rng.below(9)),
                format!("{i}.png"),
                "caption, with comma",
                ecc,
                mv,
            )
        })
        .collect();
    Manifest::from_frames(ManifestHeader::default(), frames).unwrap()
}

#[test]
fn randomized_split_trials() {
    let started = Instant::now();
    let mut rng = SeededRng::new(0x5eed);
    let mut trials = 0;
    while trials < 1000 {
        let n = 2 + rng.below(199) as usize;
        let strata = 1 + rng.below(7) as usize;
        let manifest = synthetic(&mut rng, n, strata);
        let test_count = rng.below(n as u64) as usize;
        let train = n - test_count;
        let mut sizes: Vec<usize> = (0..rng.below(4))
            .map(|_| 1 + rng.below(train.max(1) as u64) as usize)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes.retain(|&s| s <= train);
        let spec = SplitSpec {
            test_count,
            subset_sizes: sizes,
            seed: rng.next_u64(),
            stratify_by: if rng.below(4) == 0 {
                StratifyBy::Mv
            } else {
                StratifyBy::Ecc
            },
        };
        let out = dataset::split(&manifest, &spec).unwrap();
        oracle::check_split(&manifest, &out, &spec).unwrap_or_else(|e| panic!("trial {trials}: {e} ({spec:?})"));
        let again = dataset::split(&manifest, &spec).unwrap();
        assert_eq!(out.to_tsv(), again.to_tsv(), "trial {trials} not reproducible");
        trials += 1;
    }
    assert!(started.elapsed().as_secs_f64() < 10.0, "took {:?}", started.elapsed());
}

#[test]
fn ten_frames_five_strata_has_a_unique_apportionment() {
    let sizes = [2, 2, 2, 2, 2];
    assert_eq!(oracle::admissible_allocations(&sizes, 5), vec![vec![1, 1, 1, 1, 1]]);

    let frames = (0..10)
        .map(|i| FrameRecord::new(format!("f{i}"), "x.png", "gt", ECCS[i / 2], Mv::T2))
        .collect();
    let manifest = Manifest::from_frames(ManifestHeader::default(), frames).unwrap();
    let spec = SplitSpec {
        test_count: 5,
        subset_sizes: vec![],
        seed: 42,
        stratify_by: StratifyBy::Ecc,
    };
    let out = dataset::split(&manifest, &spec).unwrap();
    for ecc in &ECCS[..5] {
        let in_test = out
            .frames()
            .iter()
            .filter(|f| f.ecc == *ecc && f.split == dataset::Split::Test)
            .count();
        assert_eq!(in_test, 1, "{ecc:?}");
    }
    assert_eq!(out.to_tsv(), dataset::split(&manifest, &spec).unwrap().to_tsv());
}

#[test]
fn apportionment_is_always_admissible() {
    let mut rng = SeededRng::new(7);
    for _ in 0..500 {
        let strata = 1 + rng.below(5) as usize;
        let sizes: Vec<usize> = (0..strata).map(|_| 1 + rng.below(6) as usize).collect();
        let n: usize = sizes.iter().sum();
        let total = rng.below(n as u64 + 1) as usize;
        let got = dataset::apportion(&sizes, total);
        assert!(
            oracle::admissible_allocations(&sizes, total).contains(&got),
            "{sizes:?} {total} -> {got:?}"
        );
    }
}

#[test]
fn row_order_does_not_change_the_split() {
    let mut rng = SeededRng::new(3);
    let manifest = synthetic(&mut rng, 150, 5);
    let mut shuffled: Vec<FrameRecord> = manifest.frames().to_vec();
    rng.shuffle(&mut shuffled);
    let reordered = Manifest::from_frames(ManifestHeader::default(), shuffled).unwrap();
    let spec = SplitSpec {
        test_count: 30,
        subset_sizes: vec![40, 70, 100],
        seed: 11,
        stratify_by: StratifyBy::Ecc,
    };
    let a = dataset::split(&manifest, &spec).unwrap();
    let b = dataset::split(&reordered, &spec).unwrap();
    for f in a.frames() {
        let g = b.get(&f.frame_id).unwrap();
        assert_eq!((f.split, &f.subset_tags), (g.split, &g.subset_tags));
    }
}
