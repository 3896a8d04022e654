//! Flat `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Unknown
//! keys and repeated keys are errors. Missing keys keep their defaults; the
//! batch-size default depends on `mode`, so `mode` is resolved first.
//! [`to_text`] writes every key, and loading its output reproduces the same
//! configuration.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::{Mode, TrainConfig};

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "mode",
    "variant",
    "seed",
    "seeds",
    "targets",
    "tau",
    "alpha",
    "bank_size",
    "lr",
    "cosine",
    "epochs",
    "batch_size",
    "sgd_momentum",
    "weight_decay",
    "hidden",
    "feature_dim",
    "embed_dim",
    "n_classes",
    "n_domains",
    "per_domain",
    "class_spread",
    "distractor_dims",
    "max_rotation",
    "offset_scale",
    "distractor_scale",
    "class_cue_scale",
    "distractor_noise",
    "noise",
    "p_same_class",
    "jitter",
    "dropout",
    "source_holdout",
    "msda_adapt_fraction",
];

fn split_line(line: &str) -> Option<&str> {
    let body = line.split('#').next().unwrap_or("").trim();
    (!body.is_empty()).then_some(body)
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad list entry `{p}`")))
        .collect()
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("bad boolean `{v}`")),
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("bad number `{v}`"))
}

fn set(cfg: &mut TrainConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    match key {
        "mode" => cfg.mode = v.parse().map_err(|e: Error| e.to_string())?,
        "variant" => cfg.variant = v.parse().map_err(|e: Error| e.to_string())?,
        "seed" => cfg.seed = num(v)?,
        "seeds" => cfg.seeds = num(v)?,
        "targets" => cfg.targets = parse_list(v)?,
        "tau" => cfg.tau = num(v)?,
        "alpha" => cfg.alpha = num(v)?,
        "bank_size" => cfg.bank_size = num(v)?,
        "lr" => cfg.lr = num(v)?,
        "cosine" => cfg.cosine = parse_bool(v)?,
        "epochs" => cfg.epochs = num(v)?,
        "batch_size" => cfg.batch_size = num(v)?,
        "sgd_momentum" => cfg.sgd_momentum = num(v)?,
        "weight_decay" => cfg.weight_decay = num(v)?,
        "hidden" => cfg.hidden = parse_list(v)?,
        "feature_dim" => cfg.feature_dim = num(v)?,
        "embed_dim" => cfg.embed_dim = num(v)?,
        "n_classes" => cfg.data.n_classes = num(v)?,
        "n_domains" => cfg.data.n_domains = num(v)?,
        "per_domain" => cfg.data.per_domain = num(v)?,
        "class_spread" => cfg.data.class_spread = num(v)?,
        "distractor_dims" => cfg.data.distractor_dims = num(v)?,
        "max_rotation" => cfg.data.max_rotation = num(v)?,
        "offset_scale" => cfg.data.offset_scale = num(v)?,
        "distractor_scale" => cfg.data.distractor_scale = num(v)?,
        "class_cue_scale" => cfg.data.class_cue_scale = num(v)?,
        "distractor_noise" => cfg.data.distractor_noise = num(v)?,
        "noise" => cfg.data.noise = num(v)?,
        "p_same_class" => cfg.policy.p_same_class = num(v)?,
        "jitter" => cfg.policy.augment.jitter = num(v)?,
        "dropout" => cfg.policy.augment.dropout = num(v)?,
        "source_holdout" => cfg.source_holdout = num(v)?,
        "msda_adapt_fraction" => cfg.msda_adapt_fraction = num(v)?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

fn get(cfg: &TrainConfig, key: &str) -> String {
    let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    match key {
        "mode" => cfg.mode.name().into(),
        "variant" => cfg.variant.name().into(),
        "seed" => cfg.seed.to_string(),
        "seeds" => cfg.seeds.to_string(),
        "targets" => list(&cfg.targets),
        "tau" => cfg.tau.to_string(),
        "alpha" => cfg.alpha.to_string(),
        "bank_size" => cfg.bank_size.to_string(),
        "lr" => cfg.lr.to_string(),
        "cosine" => cfg.cosine.to_string(),
        "epochs" => cfg.epochs.to_string(),
        "batch_size" => cfg.batch_size.to_string(),
        "sgd_momentum" => cfg.sgd_momentum.to_string(),
        "weight_decay" => cfg.weight_decay.to_string(),
        "hidden" => list(&cfg.hidden),
        "feature_dim" => cfg.feature_dim.to_string(),
        "embed_dim" => cfg.embed_dim.to_string(),
        "n_classes" => cfg.data.n_classes.to_string(),
        "n_domains" => cfg.data.n_domains.to_string(),
        "per_domain" => cfg.data.per_domain.to_string(),
        "class_spread" => cfg.data.class_spread.to_string(),
        "distractor_dims" => cfg.data.distractor_dims.to_string(),
        "max_rotation" => cfg.data.max_rotation.to_string(),
        "offset_scale" => cfg.data.offset_scale.to_string(),
        "distractor_scale" => cfg.data.distractor_scale.to_string(),
        "class_cue_scale" => cfg.data.class_cue_scale.to_string(),
        "distractor_noise" => cfg.data.distractor_noise.to_string(),
        "noise" => cfg.data.noise.to_string(),
        "p_same_class" => cfg.policy.p_same_class.to_string(),
        "jitter" => cfg.policy.augment.jitter.to_string(),
        "dropout" => cfg.policy.augment.dropout.to_string(),
        "source_holdout" => cfg.source_holdout.to_string(),
        "msda_adapt_fraction" => cfg.msda_adapt_fraction.to_string(),
        _ => unreachable!("key list and getter disagree on `{key}`"),
    }
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    parse_config_with_mode(text, Mode::Dg)
}

/// As [`parse_config`], with `default_mode` used when the text sets no mode.
pub fn parse_config_with_mode(text: &str, default_mode: Mode) -> Result<TrainConfig> {
    let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let Some(body) = split_line(line) else { continue };
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::parse(n, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::parse(n, format!("unknown key `{k}`")));
        }
        if let Some((first, _, _)) = pairs.iter().find(|(_, pk, _)| *pk == k) {
            return Err(Error::parse(n, format!("key `{k}` already set on line {first}")));
        }
        pairs.push((n, k, v));
    }
    let mode = match pairs.iter().find(|(_, k, _)| *k == "mode") {
        Some((n, _, v)) => v.parse::<Mode>().map_err(|e| Error::parse(*n, e.to_string()))?,
        None => default_mode,
    };
    let mut cfg = TrainConfig::for_mode(mode);
    for (n, k, v) in &pairs {
        set(&mut cfg, k, v).map_err(|msg| Error::parse(*n, format!("{k}: {msg}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Every key with its resolved value.
pub fn to_text(cfg: &TrainConfig) -> String {
    let mut out = String::from("# resolved configuration\n");
    for k in KEYS {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&get(cfg, k));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Variant;

    #[test]
    fn empty_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!((c.tau, c.alpha, c.bank_size, c.policy.p_same_class), (0.07, 0.999, 256, 0.5));
    }

    #[test]
    fn large_bank_accepted() {
        let c = parse_config("bank_size=2048\n").unwrap();
        assert_eq!(c.bank_size, 2048);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# hi\n\nvariant = vanilla  # trailing\n").unwrap();
        assert_eq!(c.variant, Variant::Vanilla);
    }

    #[test]
    fn msda_mode_changes_batch_default() {
        assert_eq!(parse_config("mode = msda").unwrap().batch_size, 32);
        assert_eq!(parse_config("batch_size = 60\nmode = msda").unwrap().batch_size, 60);
    }

    #[test]
    fn errors_carry_line_or_key() {
        match parse_config("tau=0.1\nbogus=1\n") {
            Err(Error::Parse { line: 2, msg }) => assert!(msg.contains("bogus")),
            other => panic!("{other:?}"),
        }
        match parse_config("alpha = 1.0") {
            Err(Error::Config(msg)) => assert!(msg.contains("alpha")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("tau"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("seed=1\nseed=2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("epochs = -3"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn echo_round_trip() {
        let c = parse_config("tau = 0.123456789\nhidden = 8,4\ntargets = 0,2\nvariant = contrastive").unwrap();
        let again = parse_config(&to_text(&c)).unwrap();
        assert_eq!(again, c);
        assert_eq!(to_text(&again), to_text(&c));
    }
}
