//! Plan files: flat `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Lists are comma-separated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::plan::{ExperimentPlan, Grid, Method, NnSettings, OjaChoice, PpcaSettings, RunSettings, Task};

/// Raw parsed file: section name → (key → (value, line)).
pub type Sections = BTreeMap<String, BTreeMap<String, (String, usize)>>;

const ROOT: &str = "";

/// Accepted keys per section.
const KEYS: &[(&str, &[&str])] = &[
    (ROOT, &["name", "task", "method", "reps", "seed", "out"]),
    ("grid", &["d", "gamma", "k_hat", "method"]),
    (
        "run",
        &[
            "k", "m", "t_max", "c", "t_offset", "oja_schedule", "oja_c", "oja_c0", "oja_alpha", "oja_beta", "oja_rho",
            "warmup_steps", "warmup_eta", "freeze_after", "freeze_fraction", "align", "norm_order", "n_test",
        ],
    ),
    ("ppca", &["refresh_every", "window", "rotate_coeffs", "align"]),
    (
        "nn",
        &[
            "width", "epochs", "n_train", "n_warmup", "n_valid", "n_test", "m", "c", "gamma", "warmup_steps",
            "warmup_eta", "oja_c", "oja_c0",
        ],
    ),
    ("csv", &["path", "truth_k"]),
];

/// Tokenizes `text`. Duplicate keys and malformed lines are parse errors;
/// unknown sections or keys are validation errors naming the key.
pub fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections = Sections::new();
    sections.insert(ROOT.to_string(), BTreeMap::new());
    let mut current = ROOT.to_string();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::validation(format!("[{name}]"), "unknown section"));
            }
            if sections.contains_key(&name) {
                return Err(parse_err(line_no, &format!("section [{name}] appears twice")));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = name;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(parse_err(line_no, "empty key"));
        }
        let allowed = KEYS.iter().find(|(s, _)| *s == current).map(|(_, k)| *k).unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(Error::validation(qualified(&current, key), "unknown key"));
        }
        let section = sections.get_mut(&current).expect("section registered");
        if section.insert(key.to_string(), (value.to_string(), line_no)).is_some() {
            return Err(parse_err(line_no, &format!("duplicate key `{key}`")));
        }
    }
    Ok(sections)
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Typed access to one section with defaults.
struct View<'a> {
    name: &'a str,
    map: Option<&'a BTreeMap<String, (String, usize)>>,
}

impl View<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.and_then(|m| m.get(key)).map(|(v, _)| v.as_str())
    }

    fn bad(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::validation(qualified(self.name, key), msg)
    }

    fn get<V: std::str::FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| self.bad(key, format!("cannot parse `{s}`"))),
        }
    }

    fn opt<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.raw(key) {
            None | Some("none") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| self.bad(key, format!("cannot parse `{s}`"))),
        }
    }

    fn list<V: std::str::FromStr>(&self, key: &str, default: Vec<V>) -> Result<Vec<V>> {
        let Some(s) = self.raw(key) else {
            return Ok(default);
        };
        let items: Vec<V> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| self.bad(key, format!("cannot parse `{t}`"))))
            .collect::<Result<_>>()?;
        if items.is_empty() {
            return Err(self.bad(key, "list is empty"));
        }
        Ok(items)
    }
}

fn view<'a>(sections: &'a Sections, name: &'a str) -> View<'a> {
    View {
        name,
        map: sections.get(name),
    }
}

/// Reads and resolves a plan file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut plan = parse_plan_text(&text)?;
    if let Task::CsvStream { path: csv, .. } = &mut plan.task {
        if csv.is_relative() {
            if let Some(dir) = path.parent() {
                *csv = dir.join(&*csv);
            }
        }
    }
    Ok(plan)
}

/// Resolves a plan from text; relative paths stay relative to the caller.
pub fn parse_plan_text(text: &str) -> Result<ExperimentPlan> {
    let sections = parse_sections(text)?;
    let root = view(&sections, ROOT);
    let grid = view(&sections, "grid");
    let run = view(&sections, "run");
    let ppca = view(&sections, "ppca");
    let nn = view(&sections, "nn");
    let csv = view(&sections, "csv");

    let task = match root.get("task", "linear_synth".to_string())?.as_str() {
        "linear_synth" => Task::LinearSynth,
        "nn_synth" => Task::NnSynth,
        "csv_stream" => Task::CsvStream {
            path: PathBuf::from(
                csv.raw("path")
                    .ok_or_else(|| Error::validation("csv.path", "required for csv_stream"))?,
            ),
            truth_k: csv.get("truth_k", 0)?,
        },
        other => return Err(root.bad("task", format!("unknown task `{other}`"))),
    };

    let single_method: Option<Method> = root.opt("method")?;
    let methods = match (grid.raw("method"), single_method) {
        (Some(_), Some(_)) => return Err(root.bad("method", "give `method` either at the top level or in [grid]")),
        (Some(_), None) => grid.list("method", vec![])?,
        (None, m) => vec![m.unwrap_or(Method::Fsgd)],
    };

    let settings = RunSettings {
        k: run.get("k", 3)?,
        m: run.get("m", 5)?,
        t_max: run.get("t_max", 100_000)?,
        c: run.get("c", 0.5)?,
        t_offset: run.get("t_offset", 1.0)?,
        oja: match run.get("oja_schedule", "practical".to_string())?.as_str() {
            "practical" => OjaChoice::Practical {
                c: run.get("oja_c", 0.1)?,
                c0: run.get("oja_c0", 50.0)?,
            },
            "theoretical" => OjaChoice::Theoretical {
                alpha: run.get("oja_alpha", 8.0)?,
                beta: run.get("oja_beta", 50.0)?,
                rho_k: match run.raw("oja_rho") {
                    None | Some("auto") => None,
                    Some(_) => Some(run.get("oja_rho", 0.0)?),
                },
            },
            other => return Err(run.bad("oja_schedule", format!("unknown schedule `{other}`"))),
        },
        warmup_steps: run.get("warmup_steps", 10)?,
        warmup_eta: run.get("warmup_eta", 0.01)?,
        freeze_after: run.opt("freeze_after")?,
        freeze_fraction: run.get("freeze_fraction", 0.5)?,
        align: run.get("align", false)?,
        norm_order: match run.raw("norm_order") {
            None | Some("auto") => None,
            Some(_) => Some(run.get("norm_order", 2u32)?),
        },
        n_test: run.get("n_test", 1_000)?,
    };
    let ppca_settings = PpcaSettings {
        refresh_every: match ppca.raw("refresh_every") {
            None => Some(10),
            Some(_) => ppca.opt("refresh_every")?,
        },
        window: ppca.get("window", 20)?,
        rotate_coeffs: ppca.get("rotate_coeffs", true)?,
        align: ppca.get("align", false)?,
    };
    finish(&root, &grid, &nn, task, methods, settings, ppca_settings)
}

fn finish(
    root: &View,
    grid: &View,
    nn: &View,
    task: Task,
    methods: Vec<Method>,
    settings: RunSettings,
    ppca: PpcaSettings,
) -> Result<ExperimentPlan> {
    let default_d = match task {
        Task::CsvStream { .. } => vec![0],
        _ => vec![40],
    };
    let nn_settings = NnSettings {
        width: nn.get("width", 50)?,
        epochs: nn.get("epochs", 100)?,
        n_train: nn.get("n_train", 500)?,
        n_warmup: nn.get("n_warmup", 50)?,
        n_valid: nn.get("n_valid", 150)?,
        n_test: nn.get("n_test", 15_000)?,
        m: nn.get("m", 32)?,
        c: nn.get("c", 0.05)?,
        gamma: nn.get("gamma", 0.3)?,
        warmup_steps: nn.get("warmup_steps", 200)?,
        warmup_eta: nn.get("warmup_eta", 0.005)?,
        oja_c: nn.get("oja_c", 0.05)?,
        oja_c0: nn.get("oja_c0", 50.0)?,
    };
    let plan = ExperimentPlan {
        name: root.get("name", "plan".to_string())?,
        task,
        grid: Grid {
            d: grid.list("d", default_d)?,
            gamma: grid.list("gamma", vec![0.6])?,
            k_hat: grid.list("k_hat", vec![settings.k])?,
            method: methods,
        },
        reps: root.get("reps", 1)?,
        seed: root.get("seed", 0)?,
        out_dir: PathBuf::from(root.get("out", "results".to_string())?),
        run: settings,
        ppca,
        nn: nn_settings,
    };
    plan.validate()?;
    Ok(plan)
}
