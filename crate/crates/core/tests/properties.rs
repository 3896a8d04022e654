use std::collections::VecDeque;

use proptest::prelude::*;

use steam::autodiff::Graph;
use steam::banks::{dump_banks, parse_bank_dump, FeatureQueue, SemanticBank, StyleBankSet};
use steam::checkpoint::Checkpoint;
use steam::config::{parse_config, to_text};
use steam::data::{rng_for, Dataset, Sample};
use steam::losses::{classification_loss, orthogonality_loss, style_contrastive};
use steam::model::{mirror_distance, momentum_update, EncoderParams, ModelDims};
use steam::tensor::Tensor;
use steam::train::cosine_lr;
use steam::verify::oracle;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.into_iter().map(|x| x / n).collect()
}

fn rows(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, k), n)
}

fn tensor(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(r.len(), r[0].len(), r.concat())
}

proptest! {
    #[test]
    fn queue_matches_list_model(cap in 1usize..10, angles in prop::collection::vec(-3.0..3.0f64, 0..40)) {
        let mut q = FeatureQueue::new(cap, 2).unwrap();
        let mut model = VecDeque::new();
        for a in angles {
            let v = vec![a.cos(), a.sin()];
            let evicted = q.push(&v).unwrap();
            model.push_back(v);
            let expect = if model.len() > cap { model.pop_front() } else { None };
            prop_assert_eq!(evicted, expect);
            prop_assert_eq!(q.len(), model.len());
            prop_assert_eq!(q.is_full(), model.len() == cap);
            let got: Vec<Vec<f64>> = q.iter().map(|r| r.to_vec()).collect();
            prop_assert_eq!(got, model.iter().cloned().collect::<Vec<_>>());
        }
    }

    #[test]
    fn queue_rejects_bad_rows(cap in 1usize..5, dim in 1usize..5, extra in 1usize..3) {
        let mut q = FeatureQueue::new(cap, dim).unwrap();
        prop_assert!(q.push(&unit(vec![1.0; dim + extra])).is_err());
        prop_assert!(q.push(&vec![2.0; dim]).is_err());
        prop_assert!(q.is_empty());
    }

    #[test]
    fn config_echo_round_trips(
        tau in 0.01..2.0f64,
        alpha in 0.0..0.9999f64,
        bank in 1usize..4096,
        lr in 1e-4..1.0f64,
        epochs in 0usize..100,
        hidden in prop::collection::vec(1usize..128, 1..4),
        p in 0.0..1.0f64,
    ) {
        let text = format!(
            "tau = {tau}\nalpha = {alpha}\nbank_size = {bank}\nlr = {lr}\nepochs = {epochs}\nhidden = {}\np_same_class = {p}\n",
            hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!((cfg.tau, cfg.alpha, cfg.bank_size, cfg.lr), (tau, alpha, bank, lr));
        let again = parse_config(&to_text(&cfg)).unwrap();
        prop_assert_eq!(again, cfg);
    }

    #[test]
    fn dataset_csv_round_trips(
        xs in prop::collection::vec((prop::collection::vec(-1e6..1e6f64, 3), prop::option::of(0usize..5), 0usize..4), 1..30)
    ) {
        let samples: Vec<Sample> = xs.into_iter().map(|(x, y, d)| Sample { x, y, d }).collect();
        let n_classes = samples.iter().filter_map(|s| s.y).max().map_or(0, |m| m + 1);
        let n_domains = samples.iter().map(|s| s.d).max().unwrap() + 1;
        let data = Dataset { samples, n_classes, n_domains, dim: 3 };
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), data);
    }

    #[test]
    fn checkpoint_round_trips_bit_exact(seed in 0u64..1000, input in 1usize..6, classes in 2usize..5) {
        let mut rng = rng_for(seed, 0);
        let enc = EncoderParams::init(&ModelDims::desk(input, classes), &mut rng);
        let mem = enc.memory_copy();
        let c = Checkpoint::from_model(&enc, Some(&mem));
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back.encoder().unwrap(), enc);
        prop_assert_eq!(back.memory().unwrap(), Some(mem));
    }

    #[test]
    fn bank_dump_round_trips(seed in 0u64..1000, cap in 1usize..6, dim in 1usize..4, n in 0usize..12) {
        use rand::Rng;
        let mut rng = rng_for(seed, 1);
        let mut style = StyleBankSet::new(2, cap, dim).unwrap();
        let mut sem = SemanticBank::new(cap, dim).unwrap();
        for i in 0..n {
            let v = unit((0..dim).map(|_| rng.random::<f64>() + 0.1).collect());
            style.push(i % 2, &v).unwrap();
            sem.push(&v).unwrap();
        }
        let parsed = parse_bank_dump(&dump_banks(&style, &sem)).unwrap();
        prop_assert_eq!(parsed.len(), 3);
        prop_assert_eq!(&parsed[0].1, &style.queue(0).unwrap().snapshot());
        prop_assert_eq!(&parsed[1].1, &style.queue(1).unwrap().snapshot());
        prop_assert_eq!(&parsed[2].1, &sem.snapshot());
    }

    #[test]
    fn momentum_step_moves_exactly_one_minus_alpha(seed in 0u64..500, alpha in 0.0..0.9999f64) {
        let mut rng = rng_for(seed, 2);
        let dims = ModelDims::desk(5, 3);
        let enc = EncoderParams::init(&dims, &mut rng);
        let mut mem = EncoderParams::init(&dims, &mut rng).memory_copy();
        let before = mirror_distance(&mem, &enc);
        momentum_update(&mut mem, &enc, alpha).unwrap();
        let after = mirror_distance(&mem, &enc);
        prop_assert!((after - alpha * before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn cosine_schedule_is_bounded_and_monotone(lr0 in 1e-4..1.0f64, total in 1usize..500) {
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let lr = cosine_lr(lr0, t, total);
            prop_assert!((0.0..=lr0).contains(&lr));
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(cosine_lr(lr0, 0, total), lr0);
    }

    #[test]
    fn style_contrast_ignores_row_order(s in rows(5, 3), shift in 1usize..5, seed in 0u64..100) {
        use rand::Rng;
        let mut rng = rng_for(seed, 3);
        let mut bank = StyleBankSet::new(3, 3, 3).unwrap();
        for d in 0..3 {
            for _ in 0..3 {
                bank.push(d, &unit((0..3).map(|_| rng.random::<f64>() - 0.5).collect())).unwrap();
            }
        }
        let domains = vec![0, 1, 2, 0, 1];
        let value = |rows: &[Vec<f64>], doms: &[usize]| {
            let mut g = Graph::new();
            let v = g.param(tensor(rows));
            let l = style_contrastive(&mut g, v, doms, &bank, 0.1).unwrap();
            g.value(l).item()
        };
        let mut rs = s.clone();
        let mut ds = domains.clone();
        rs.rotate_left(shift);
        ds.rotate_left(shift);
        prop_assert!((value(&s, &domains) - value(&rs, &ds)).abs() < 1e-12);
    }

    #[test]
    fn classification_ignores_logit_shifts(z in rows(4, 3), c in -50.0..50.0f64) {
        let labels = [Some(0), Some(2), None, Some(1)];
        let value = |rows: &[Vec<f64>]| {
            let mut g = Graph::new();
            let v = g.param(tensor(rows));
            let l = classification_loss(&mut g, v, &labels).unwrap();
            g.value(l).item()
        };
        let shifted: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|v| v + c).collect()).collect();
        prop_assert!((value(&z) - value(&shifted)).abs() < 1e-9);
        prop_assert!((value(&z) - oracle::cross_entropy(&z, &labels)).abs() < 1e-10);
    }

    #[test]
    fn orthogonality_is_symmetric_and_nonnegative(a in rows(4, 3), b in rows(4, 2)) {
        let value = |x: &[Vec<f64>], y: &[Vec<f64>]| {
            let mut g = Graph::new();
            let u = g.param(tensor(x));
            let v = g.param(tensor(y));
            let l = orthogonality_loss(&mut g, u, v).unwrap();
            g.value(l).item()
        };
        let ab = value(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - value(&b, &a)).abs() <= 1e-10 * ab.max(1.0));
    }
}
