//! Plain-text `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::deq::SolverMethod;
use crate::error::{io_err, Error, Result};
use crate::train::{TrainConfig, TrainMode};
use crate::unroll::WeightScheme;

/// Keys understood by [`apply_training_config`], with what they set.
pub const TRAINING_KEYS: &[(&str, &str)] = &[
    ("lambda", "regularization weight"),
    ("lr", "AdamW learning rate"),
    ("weight_decay", "AdamW decoupled weight decay"),
    ("beta1", "AdamW first-moment decay"),
    ("beta2", "AdamW second-moment decay"),
    ("epochs", "passes over the training split"),
    ("seed", "initialization and shuffling seed"),
    ("grad_clip", "global gradient-norm clip, 0 = off"),
    ("hidden", "hidden channels of the update network"),
    ("alpha", "output scale of the update network"),
    ("unroll_steps", "unroll: training steps T"),
    ("weight_scheme", "unroll: final_only | exponential"),
    ("solver_steps", "deq: solver budget T"),
    ("rel_tol", "deq: relative residual tolerance"),
    ("solver", "deq: plain | anderson"),
    ("anderson_memory", "deq: Anderson memory m"),
    ("samples", "deq: intermediate states S"),
    ("gamma", "deq: weight of intermediate terms"),
    ("tau", "deq: phantom damping"),
    ("phantom_steps", "deq: phantom steps K"),
];

/// Parsed `key = value` pairs with their source lines.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    /// Blank lines and lines starting with `#` are ignored; keys must be unique.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(KeyValues {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        KeyValues::parse(&text, path)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.parse().map(Some).map_err(|e: V::Err| Error::Parse {
            path: self.path.clone(),
            line: *line,
            detail: format!("{key}: {e}"),
        })
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            detail: format!("missing key {key:?}"),
        })
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |(l, _)| *l)
    }
}

fn set<V: FromStr>(kv: &KeyValues, key: &str, slot: &mut V) -> Result<()>
where
    V::Err: std::fmt::Display,
{
    if let Some(v) = kv.get(key)? {
        *slot = v;
    }
    Ok(())
}

/// Overrides fields of `cfg` from `kv`; unknown keys are errors.
pub fn apply_training_config(kv: &KeyValues, cfg: &mut TrainConfig) -> Result<()> {
    for key in kv.keys() {
        if !TRAINING_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Parse {
                path: kv.path.clone(),
                line: kv.line_of(key),
                detail: format!("unknown key {key:?}"),
            });
        }
    }
    set(kv, "lambda", &mut cfg.lambda)?;
    set(kv, "lr", &mut cfg.optim.lr)?;
    set(kv, "weight_decay", &mut cfg.optim.weight_decay)?;
    set(kv, "beta1", &mut cfg.optim.beta1)?;
    set(kv, "beta2", &mut cfg.optim.beta2)?;
    set(kv, "epochs", &mut cfg.epochs)?;
    set(kv, "seed", &mut cfg.seed)?;
    set(kv, "grad_clip", &mut cfg.grad_clip)?;
    set(kv, "hidden", &mut cfg.network.hidden)?;
    set(kv, "alpha", &mut cfg.network.alpha)?;
    match &mut cfg.mode {
        TrainMode::Unroll(u) => {
            set(kv, "unroll_steps", &mut u.steps)?;
            set::<WeightScheme>(kv, "weight_scheme", &mut u.weights)?;
        }
        TrainMode::Deq(d) => {
            set(kv, "solver_steps", &mut d.solver.max_steps)?;
            set(kv, "rel_tol", &mut d.solver.rel_tol)?;
            set::<SolverMethod>(kv, "solver", &mut d.solver.method)?;
            set(kv, "anderson_memory", &mut d.solver.anderson_memory)?;
            set(kv, "samples", &mut d.samples)?;
            set(kv, "gamma", &mut d.gamma)?;
            set(kv, "tau", &mut d.phantom.damping)?;
            set(kv, "phantom_steps", &mut d.phantom.steps)?;
        }
    }
    Ok(())
}

/// Renders every training hyperparameter as `key = value` lines.
pub fn render_training_config(cfg: &TrainConfig) -> String {
    let mut lines = vec![
        format!("lambda = {}", cfg.lambda),
        format!("lr = {}", cfg.optim.lr),
        format!("weight_decay = {}", cfg.optim.weight_decay),
        format!("beta1 = {}", cfg.optim.beta1),
        format!("beta2 = {}", cfg.optim.beta2),
        format!("epochs = {}", cfg.epochs),
        format!("seed = {}", cfg.seed),
        format!("grad_clip = {}", cfg.grad_clip),
        format!("hidden = {}", cfg.network.hidden),
        format!("alpha = {}", cfg.network.alpha),
    ];
    match &cfg.mode {
        TrainMode::Unroll(u) => {
            lines.push(format!("unroll_steps = {}", u.steps));
            lines.push(format!("weight_scheme = {}", u.weights));
        }
        TrainMode::Deq(d) => {
            lines.push(format!("solver_steps = {}", d.solver.max_steps));
            lines.push(format!("rel_tol = {}", d.solver.rel_tol));
            lines.push(format!("solver = {}", d.solver.method));
            lines.push(format!("anderson_memory = {}", d.solver.anderson_memory));
            lines.push(format!("samples = {}", d.samples));
            lines.push(format!("gamma = {}", d.gamma));
            lines.push(format!("tau = {}", d.phantom.damping));
            lines.push(format!("phantom_steps = {}", d.phantom.steps));
        }
    }
    lines.into_iter().map(|l| l + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_apply() {
        let text = "# comment\nlambda = 0.5\n\nsamples=2\ntau = 0.25\n";
        let kv = KeyValues::parse(text, Path::new("c.txt")).unwrap();
        let mut cfg = TrainConfig::deq();
        apply_training_config(&kv, &mut cfg).unwrap();
        assert_eq!(cfg.lambda, 0.5);
        let TrainMode::Deq(d) = cfg.mode else { panic!() };
        assert_eq!((d.samples, d.phantom.damping), (2, 0.25));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let p = Path::new("c.txt");
        assert!(matches!(KeyValues::parse("a = 1\nnope\n", p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n", p), Err(Error::Parse { line: 2, .. })));
        let kv = KeyValues::parse("lambda = 1\nbogus = 3\n", p).unwrap();
        let err = apply_training_config(&kv, &mut TrainConfig::unroll()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let kv = KeyValues::parse("epochs = many\n", p).unwrap();
        assert!(apply_training_config(&kv, &mut TrainConfig::unroll()).is_err());
    }

    #[test]
    fn render_round_trips() {
        for cfg in [TrainConfig::unroll(), TrainConfig::deq()] {
            let text = render_training_config(&cfg);
            let kv = KeyValues::parse(&text, Path::new("x")).unwrap();
            let mut back = match cfg.mode {
                TrainMode::Unroll(_) => TrainConfig::unroll(),
                TrainMode::Deq(_) => TrainConfig::deq(),
            };
            back.epochs = 1;
            apply_training_config(&kv, &mut back).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
