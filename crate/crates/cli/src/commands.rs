use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use savehr::cohort::io::{read_cohort, read_population, write_cohort, write_population};
use savehr::cohort::{build_cohort, build_external, generate_population, PatientTensor, Vocabulary};
use savehr::interpret::{
    export_heatmap, pairwise_from_trace, population_heatmap, quarter_attention_summary, Aggregation,
    PREDICTION_THRESHOLD,
};
use savehr::metrics::{auc_pr, auc_roc, cross_validate, score_set, EvalReport, EvalRow};
use savehr::model::{read_checkpoint, token_label, write_checkpoint, ModelKind};
use savehr::train::predict_many;
use savehr::zoo::AnyModel;

use crate::config::{RunConfig, Settings};
use crate::manifest;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Cohort,
    Train,
    Eval,
    Explain,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Cohort => "cohort",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Explain => "explain",
        }
    }
}

/// Artifact paths relative to the run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    condition: String,
    model: String,
}

impl Layout {
    pub fn new(root: &Path, settings: &Settings) -> Self {
        Layout {
            root: root.to_path_buf(),
            condition: settings.condition.name.clone(),
            model: settings.kind.name().to_string(),
        }
    }

    pub fn population(&self, p: &str) -> String {
        format!("{p}.pop")
    }

    pub fn cohort(&self, part: &str) -> String {
        format!("{}/{part}.cohort", self.condition)
    }

    pub fn cohort_dir(&self) -> String {
        self.condition.clone()
    }

    pub fn model_dir(&self) -> String {
        format!("{}/{}", self.condition, self.model)
    }

    pub fn in_model(&self, file: &str) -> String {
        format!("{}/{file}", self.model_dir())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

const COHORT_PARTS: [&str; 4] = ["p1_train", "p1_val", "p1_test", "p2"];

/// Runs one command and returns the text to print.
pub fn execute(command: Command, root: &Path, cfg: &RunConfig, force: bool) -> Result<String, CliError> {
    let settings = Settings::resolve(cfg)?;
    let layout = Layout::new(root, &settings);
    match command {
        Command::Gen => gen(&layout, cfg, &settings, force),
        Command::Cohort => cohort(&layout, cfg, &settings, force),
        Command::Train => train(&layout, cfg, &settings, force),
        Command::Eval => eval(&layout, cfg, &settings, force),
        Command::Explain => explain(&layout, cfg, &settings, force),
    }
}

fn refuse_existing(layout: &Layout, outputs: &[String], force: bool) -> Result<(), CliError> {
    if force {
        return Ok(());
    }
    match outputs.iter().find(|rel| layout.path(rel).exists()) {
        Some(rel) => Err(CliError::Exists(layout.path(rel).display().to_string())),
        None => Ok(()),
    }
}

fn make_dir(layout: &Layout, rel: &str) -> Result<(), CliError> {
    let dir = layout.path(rel);
    std::fs::create_dir_all(&dir).map_err(|e| savehr::Error::Io { path: dir, source: e })?;
    Ok(())
}

fn write_text(layout: &Layout, rel: &str, text: &str) -> Result<(), CliError> {
    let path = layout.path(rel);
    std::fs::write(&path, text).map_err(|e| savehr::Error::Io { path, source: e })?;
    Ok(())
}

fn write_manifest(
    layout: &Layout,
    rel: &str,
    command: Command,
    cfg: &RunConfig,
    inputs: &[String],
    outputs: &[String],
) -> Result<(), CliError> {
    let text = manifest::render(command.name(), cfg, &layout.root, inputs, outputs)?;
    write_text(layout, rel, &text)
}

fn gen(layout: &Layout, cfg: &RunConfig, s: &Settings, force: bool) -> Result<String, CliError> {
    let outputs = vec![layout.population("p1"), layout.population("p2")];
    let manifest = "gen.manifest".to_string();
    refuse_existing(layout, &[outputs.clone(), vec![manifest.clone()]].concat(), force)?;
    let p1 = generate_population(s.seed, &s.p1, s.exec)?;
    let p2 = generate_population(s.p2_seed, &s.p2, s.exec)?;
    make_dir(layout, "")?;
    write_population(&layout.path(&outputs[0]), &p1)?;
    write_population(&layout.path(&outputs[1]), &p2)?;
    write_manifest(layout, &manifest, Command::Gen, cfg, &[], &outputs)?;
    let mut out = format!("generated P1 ({} patients) and P2 ({} patients)\n", p1.len(), p2.len());
    for c in &s.p1.conditions {
        let pairs: Vec<String> = c.planted_pairs.iter().map(|p| format!("{}+{}", p.a, p.b)).collect();
        let _ = writeln!(out, "{}: planted pairs {}", c.name, pairs.join(" "));
    }
    Ok(out)
}

fn count_line(name: &str, xs: &[PatientTensor]) -> String {
    let cases = xs.iter().filter(|x| x.label.is_case()).count();
    format!("{name:<22}{cases:>7} : {}\n", xs.len() - cases)
}

fn cohort(layout: &Layout, cfg: &RunConfig, s: &Settings, force: bool) -> Result<String, CliError> {
    let inputs = vec![layout.population("p1"), layout.population("p2")];
    let parts: Vec<String> = COHORT_PARTS.iter().map(|p| layout.cohort(p)).collect();
    let counts = format!("{}/counts.txt", layout.cohort_dir());
    let manifest = format!("{}/cohort.manifest", layout.cohort_dir());
    refuse_existing(layout, &[parts.clone(), vec![counts.clone(), manifest.clone()]].concat(), force)?;

    let p1 = read_population(&layout.path(&inputs[0]))?;
    let p2 = read_population(&layout.path(&inputs[1]))?;
    let c = build_cohort(&p1, &s.cohort, s.split_seed, s.fractions)?;
    let (external, _) = build_external(&p2, &s.cohort, &c.vocab)?;

    make_dir(layout, &layout.cohort_dir())?;
    for (rel, xs) in parts.iter().zip([&c.train, &c.val, &c.test, &external]) {
        write_cohort(&layout.path(rel), &c.vocab, xs)?;
    }
    let mut table = format!("{}  (vocabulary {} codes)\n{:<22}{:>17}\n", s.condition.name, c.vocab.len(), "", "case : control");
    table.push_str(&count_line("Training (P1)", &c.train));
    table.push_str(&count_line("Validation (P1)", &c.val));
    table.push_str(&count_line("Internal Test (P1)", &c.test));
    table.push_str(&count_line("External Test (P2)", &external));
    write_text(layout, &counts, &table)?;
    let outputs = [parts, vec![counts]].concat();
    write_manifest(layout, &manifest, Command::Cohort, cfg, &inputs, &outputs)?;
    Ok(table)
}

fn read_part(layout: &Layout, part: &str) -> Result<(Vocabulary, Vec<PatientTensor>), CliError> {
    Ok(read_cohort(&layout.path(&layout.cohort(part)))?)
}

fn train(layout: &Layout, cfg: &RunConfig, s: &Settings, force: bool) -> Result<String, CliError> {
    let inputs = vec![layout.cohort("p1_train"), layout.cohort("p1_val")];
    let outputs = vec![layout.in_model("model.ckpt"), layout.in_model("train.log")];
    let manifest = layout.in_model("train.manifest");
    refuse_existing(layout, &[outputs.clone(), vec![manifest.clone()]].concat(), force)?;

    let (vocab, train_set) = read_part(layout, "p1_train")?;
    let (val_vocab, val_set) = read_part(layout, "p1_val")?;
    same_vocab(&vocab, &val_vocab, "validation split")?;
    let mut model = AnyModel::build(s.kind, &s.spec, vocab.len())?;
    let log = model.fit(&train_set, &val_set, &s.train, &s.logistic)?;

    make_dir(layout, &layout.model_dir())?;
    write_checkpoint(&layout.path(&outputs[0]), &model.to_checkpoint(&s.spec, &vocab))?;
    write_text(layout, &outputs[1], &log.to_text())?;
    write_manifest(layout, &manifest, Command::Train, cfg, &inputs, &outputs)?;
    let last = log.epochs.last();
    Ok(format!(
        "trained {} on {} patients: {} epochs, best epoch {}, final validation loss {:.4}\n",
        s.kind,
        train_set.len(),
        log.epochs.len(),
        log.best_epoch,
        last.map_or(f64::NAN, |e| e.val_loss)
    ))
}

fn same_vocab(a: &Vocabulary, b: &Vocabulary, what: &str) -> Result<(), CliError> {
    if a.hash() != b.hash() {
        return Err(savehr::Error::Compatibility(format!("{what} uses a different vocabulary")).into());
    }
    Ok(())
}

/// Loads the trained model and checks it matches the configured kind and
/// the cohort vocabulary.
fn load_model(layout: &Layout, s: &Settings, vocab: &Vocabulary) -> Result<AnyModel, CliError> {
    let ckpt = read_checkpoint(&layout.path(&layout.in_model("model.ckpt")))?;
    if ckpt.kind != s.kind {
        return Err(savehr::Error::Compatibility(format!("checkpoint holds {}, config names {}", ckpt.kind, s.kind)).into());
    }
    Ok(AnyModel::from_checkpoint(&ckpt, vocab)?.0)
}

fn eval_row(model: &AnyModel, s: &Settings, population: &str, split: &str, xs: &[PatientTensor]) -> Result<EvalRow, CliError> {
    let set = score_set(xs, predict_many(model, xs, s.exec)?)?;
    Ok(EvalRow {
        model: s.kind.name().to_string(),
        condition: s.condition.name.clone(),
        population: population.into(),
        split: split.into(),
        n_case: set.positives(),
        n_control: set.negatives(),
        auc_pr: auc_pr(&set),
        auc_roc: auc_roc(&set),
        cv: None,
    })
}

fn eval(layout: &Layout, cfg: &RunConfig, s: &Settings, force: bool) -> Result<String, CliError> {
    let mut inputs = vec![layout.in_model("model.ckpt"), layout.cohort("p1_test"), layout.cohort("p2")];
    if s.cv > 0 {
        inputs.extend([layout.cohort("p1_train"), layout.cohort("p1_val")]);
    }
    let outputs = vec![layout.in_model("eval.csv"), layout.in_model("eval.txt")];
    let manifest = layout.in_model("eval.manifest");
    refuse_existing(layout, &[outputs.clone(), vec![manifest.clone()]].concat(), force)?;

    let (vocab, test) = read_part(layout, "p1_test")?;
    let (p2_vocab, external) = read_part(layout, "p2")?;
    same_vocab(&vocab, &p2_vocab, "external cohort")?;
    let model = load_model(layout, s, &vocab)?;

    let mut p1_row = eval_row(&model, s, "P1", "test", &test)?;
    if s.cv > 0 {
        let (_, train_set) = read_part(layout, "p1_train")?;
        let (_, val_set) = read_part(layout, "p1_val")?;
        let fit_and_score = |_fold: usize, fit_on: &[PatientTensor], held: &[PatientTensor]| {
            let mut m = AnyModel::build(s.kind, &s.spec, vocab.len())?;
            m.fit(fit_on, &val_set, &s.train, &s.logistic)?;
            predict_many(&m, held, s.exec)
        };
        p1_row.cv = Some(cross_validate(&train_set, s.cv, s.cv_seed, s.exec, fit_and_score)?);
    }
    let report = EvalReport {
        rows: vec![p1_row, eval_row(&model, s, "P2", "external", &external)?],
    };
    report.write_csv(&layout.path(&outputs[0]))?;
    let text = report.to_text();
    write_text(layout, &outputs[1], &text)?;
    write_manifest(layout, &manifest, Command::Eval, cfg, &inputs, &outputs)?;
    Ok(text)
}

fn explain(layout: &Layout, cfg: &RunConfig, s: &Settings, force: bool) -> Result<String, CliError> {
    if s.kind != ModelKind::Savehr {
        return Err(CliError::Config(format!("explain needs a SAVEHR model, config names {}", s.kind)));
    }
    let dir = layout.in_model("explain");
    let inputs = vec![layout.in_model("model.ckpt"), layout.cohort("p1_test"), layout.cohort("p2")];
    let mut outputs = vec![format!("{dir}/population.csv"), format!("{dir}/quarters.txt")];
    for id in &s.patients {
        outputs.push(format!("{dir}/patient_{id}.csv"));
        outputs.extend((1..=4).map(|q| format!("{dir}/patient_{id}_t{q}.csv")));
    }
    let manifest = format!("{dir}/explain.manifest");
    refuse_existing(layout, &[outputs.clone(), vec![manifest.clone()]].concat(), force)?;

    let (vocab, test) = read_part(layout, "p1_test")?;
    let (p2_vocab, external) = read_part(layout, "p2")?;
    same_vocab(&vocab, &p2_vocab, "external cohort")?;
    let model = load_model(layout, s, &vocab)?;
    let savehr = model.as_savehr().expect("kind checked above");

    let mut per_patient = Vec::new();
    for &id in &s.patients {
        let x = test
            .iter()
            .chain(&external)
            .find(|x| x.patient_id == id)
            .ok_or_else(|| savehr::Error::Lookup(format!("patient {id} is not in the P1 test or P2 cohort")))?;
        let (_, trace) = savehr.predict(x)?;
        let mut maps = pairwise_from_trace(&trace, Aggregation::Averaged, &vocab);
        maps.extend(pairwise_from_trace(&trace, Aggregation::PerQuarter, &vocab));
        per_patient.push((id, maps));
    }
    let predicted: Vec<PatientTensor> = test
        .iter()
        .zip(predict_many(savehr, &test, s.exec)?)
        .filter(|(_, p)| *p >= PREDICTION_THRESHOLD)
        .map(|(x, _)| x.clone())
        .collect();
    if predicted.is_empty() {
        return Err(savehr::Error::Input("no predicted cases in the P1 test split".into()).into());
    }
    let population = population_heatmap(savehr, &predicted, s.top_k, &vocab, s.exec)?;
    let summary = quarter_attention_summary(savehr, &test, s.exec)?;

    make_dir(layout, &dir)?;
    export_heatmap(&population, &layout.path(&outputs[0]))?;
    write_text(layout, &outputs[1], &summary.to_text())?;
    let mut rels = outputs[2..].iter();
    for (_, maps) in &per_patient {
        for m in maps {
            let rel = rels.next().expect("five files per patient");
            export_heatmap(m, &layout.path(rel))?;
        }
    }
    write_manifest(layout, &manifest, Command::Explain, cfg, &inputs, &outputs)?;

    let mut out = summary.to_text();
    let _ = writeln!(out, "\n[population] {} predicted cases, top pairs:", predicted.len());
    for (a, b, v) in population.top_pairs(5) {
        let _ = writeln!(out, "  {} × {}  {v:.4e}", token_label(a, &vocab), token_label(b, &vocab));
    }
    Ok(out)
}
