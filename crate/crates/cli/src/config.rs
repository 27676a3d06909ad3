//! The layered configuration document: built-in defaults for the command,
//! then the `--config` file, then dotted-key overrides.

use serde_json::{json, Map, Value};

use mmfuse_core::models::{ModelKind, ScaleProfile};
use mmfuse_core::synthgen::{SignalMode, SynthSpec};
use mmfuse_core::trainer::TrainConfig;

use crate::{CliConfig, CliError, Command};

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Split `key=value`; the value is parsed as JSON when possible and kept
/// as a string otherwise.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("malformed override {s:?}: expected KEY=VALUE")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(config_err(format!("malformed override key {k:?}")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// `null` and `{}` defaults accept any content below them.
fn is_open(v: &Value) -> bool {
    v.is_null() || v.as_object().is_some_and(Map::is_empty)
}

/// Reject keys of `given` that the defaults do not define.
fn check_known(defaults: &Value, given: &Value, path: &str) -> Result<(), CliError> {
    if is_open(defaults) {
        return Ok(());
    }
    if let (Some(d), Some(g)) = (defaults.as_object(), given.as_object()) {
        for (k, v) in g {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match d.get(k) {
                Some(dv) => check_known(dv, v, &p)?,
                None => return Err(config_err(format!("unknown config key {p}"))),
            }
        }
    }
    Ok(())
}

/// Overlay `patch` onto `base`; objects merge key by key.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Set a dotted key. With `strict`, every segment must already exist
/// unless an ancestor is open (`null` or `{}` by default).
fn set_path(doc: &mut Value, key: &str, value: Value, strict: bool) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let open = cur.as_object().is_some_and(Map::is_empty);
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| config_err(format!("override {key}: {} is not an object", parts[..i].join("."))))?;
        if strict && !open && !obj.contains_key(*part) {
            return Err(config_err(format!("override {key}: unknown config key {}", parts[..=i].join("."))));
        }
        let strict_below = strict && !open;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
        if !strict_below {
            return set_path(cur, &parts[i + 1..].join("."), value, false);
        }
    }
    Ok(())
}

fn profile_of(doc: &Value) -> Result<ScaleProfile, CliError> {
    match doc.get("profile") {
        None | Some(Value::Null) => Ok(ScaleProfile::micro()),
        Some(Value::String(n)) => Ok(ScaleProfile::by_name(n)?),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| config_err(format!("profile: {e}"))),
    }
}

/// Training section defaults without the keys supplied elsewhere.
fn trainer_defaults(kind: ModelKind, profile: &ScaleProfile, drop_model: bool) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(TrainConfig::defaults(kind, profile.clone())).map_err(mmfuse_core::Error::from)?;
    let obj = v.as_object_mut().expect("struct serialises to an object");
    obj.remove("profile");
    obj.remove("seed");
    if drop_model {
        obj.remove("model");
    }
    Ok(v)
}

/// Built-in defaults for `command`; `probe` (file plus overrides) picks the
/// model family and profile the training defaults depend on.
pub fn default_document(command: Command, probe: &Value) -> Result<Value, CliError> {
    let profile = profile_of(probe)?;
    let mut doc = json!({ "profile": "micro", "seed": 0 });
    let section = match command {
        Command::Synth => {
            let mut s = serde_json::to_value(SynthSpec::new(160, 0.375, profile, SignalMode::Complementary, 0))
                .map_err(mmfuse_core::Error::from)?;
            let obj = s.as_object_mut().expect("object");
            obj.remove("profile");
            obj.remove("seed");
            json!({ "synth": s })
        }
        Command::Preprocess => json!({ "data": { "manifest": null } }),
        Command::Train | Command::Multirun => {
            let model = probe
                .pointer("/trainer/model")
                .ok_or_else(|| config_err("trainer.model must be set (mri, us or fusion)"))?;
            let kind: ModelKind = serde_json::from_value(model.clone()).map_err(|e| config_err(format!("trainer.model: {e}")))?;
            let mut s = json!({
                "data": { "manifest": null },
                "trainer": trainer_defaults(kind, &profile, false)?,
            });
            if command == Command::Multirun {
                s["multirun"] = json!({ "runs": 5 });
            }
            s
        }
        Command::Compare => json!({
            "data": { "mri_manifest": null, "us_manifest": null, "paired_manifest": null },
            "protocol": {
                "runs": 5,
                "warm_start": true,
                "mri": trainer_defaults(ModelKind::Mri, &profile, true)?,
                "us": trainer_defaults(ModelKind::Us, &profile, true)?,
                "fusion": trainer_defaults(ModelKind::Fusion, &profile, true)?,
            }
        }),
        Command::Eval => json!({
            "eval": { "checkpoint": null, "manifest": null, "split": "test", "batch_size": 8 }
        }),
        Command::Explain => json!({
            "explain": {
                "checkpoint": null,
                "manifest": null,
                "split": "test",
                "class_index": 1,
                "max_samples": 4,
                "positives_only": false,
                "slices": 3,
                "layers": null
            }
        }),
        Command::Stats => json!({ "stats": { "confusion": {}, "reports": {}, "protocol": null } }),
    };
    merge(&mut doc, &section);
    Ok(doc)
}

/// Defaults, then the config file, then overrides (which must name keys
/// that exist by then).
pub fn load_document(cfg: &CliConfig) -> Result<Value, CliError> {
    let file = match &cfg.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| config_err(format!("config {} is not valid JSON: {e}", path.display())))?;
            if !v.is_object() {
                return Err(config_err(format!("config {} must be a JSON object", path.display())));
            }
            v
        }
        None => json!({}),
    };
    let mut probe = file.clone();
    for (k, v) in &cfg.overrides {
        set_path(&mut probe, k, v.clone(), false)?;
    }
    let defaults = default_document(cfg.command, &probe)?;
    check_known(&defaults, &file, "")?;
    let mut doc = defaults;
    merge(&mut doc, &file);
    for (k, v) in &cfg.overrides {
        set_path(&mut doc, k, v.clone(), true)?;
    }
    Ok(doc)
}
