use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use unitary_core::config::PipelineConfig;
use unitary_core::data::{load_mnist_dir, mnist_files, preprocess, PreprocessedDataset, RawDataset};
use unitary_core::formats::{
    read_projection, read_state, read_trace, write_atomic, write_projection, write_state, write_trace,
    FORMAT_VERSION,
};
use unitary_core::metrics::{
    fig3_csv, fig4_csv, fig5_csv, fig5_rows, norms_sidecar_path, read_metrics_csv, read_norms,
    write_metrics_csv, write_norms, MetricsRecord, NormRecord,
};
use unitary_core::network::{
    capture, epoch_metrics, train_network, train_unitary, EpochMetrics, NetworkState, UnitaryInit,
};
use unitary_core::projection::{project_network, residual_report, ResidualRow};
use unitary_core::trace::{ActivationTrace, TraceSource};
use unitary_core::Mode;

use crate::manifest::{digests, read_manifest, sha256_file, write_manifest, RunManifest};
use crate::{Command, ConfigArgs, Failure, EXIT_DIVERGED, EXIT_MISMATCH};

pub fn dispatch(cmd: Command, argv: Vec<String>) -> Result<(), Failure> {
    match cmd {
        Command::TrainBaseline {
            data_dir,
            config,
            seed,
            no_normalize,
            metrics,
            out,
            force,
        } => {
            let rec = Recorder::new("train-baseline", argv, seed.seed, &["--out", "--metrics"]);
            train_baseline(rec, &data_dir, &config, seed.seed, no_normalize, metrics, &out, force.force)
        }
        Command::Capture {
            state,
            data_dir,
            samples,
            config,
            out,
            force,
        } => {
            let rec = Recorder::new("capture", argv, None, &["--out"]);
            capture_cmd(rec, &state, &data_dir, samples, &config, &out, force.force)
        }
        Command::Project {
            trace,
            config,
            seed,
            jobs,
            out,
            force,
        } => {
            let rec = Recorder::new("project", argv, seed.seed, &["--out"]);
            project(rec, &trace, &config, seed.seed, jobs, &out, force.force)
        }
        Command::TrainUnitary {
            init,
            baseline,
            data_dir,
            config,
            seed,
            seeds,
            epochs,
            run_id,
            state_out,
            out,
            force,
        } => {
            let rec = Recorder::new("train-unitary", argv, seed.seed, &["--out", "--state-out"]);
            let seeds = if seeds.is_empty() { vec![seed.seed] } else { seeds };
            let args = UnitaryArgs {
                init,
                baseline,
                data_dir,
                seeds,
                epochs,
                run_id,
                state_out,
            };
            train_unitary_cmd(rec, args, &config, &out, force.force)
        }
        Command::Eval {
            state,
            data_dir,
            config,
            run_id,
            out,
            force,
        } => {
            let rec = Recorder::new("eval", argv, None, &["--out"]);
            eval(rec, &state, &data_dir, &config, &run_id, out.as_deref(), force.force)
        }
        Command::Report { metrics, out, force } => {
            let rec = Recorder::new("report", argv, None, &["--out"]);
            report(rec, &metrics, &out, force.force)
        }
        Command::Replay { manifest } => replay(&manifest),
    }
}

struct Recorder {
    command: &'static str,
    argv: Vec<String>,
    output_flags: Vec<String>,
    started: Instant,
}

impl Recorder {
    fn new(command: &'static str, mut argv: Vec<String>, seed: impl Into<Option<u64>>, outputs: &[&str]) -> Self {
        if let Some(seed) = seed.into() {
            let given = argv.iter().any(|a| a == "--seed" || a.starts_with("--seed="));
            if !given {
                argv.push("--seed".into());
                argv.push(seed.to_string());
            }
        }
        Self {
            command,
            argv,
            output_flags: outputs.iter().map(|s| s.to_string()).collect(),
            started: Instant::now(),
        }
    }

    fn finish(
        self,
        primary: &Path,
        config: &impl Serialize,
        seeds: Vec<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command.into(),
            cwd: std::env::current_dir().map_err(|e| Failure::data(format!("working directory: {e}")))?,
            argv: self.argv,
            output_flags: self.output_flags,
            config: serde_json::to_value(config).expect("config serializes"),
            seeds,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            duration_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").into(),
            format_version: FORMAT_VERSION,
        };
        let path = write_manifest(primary, &manifest)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let base = PipelineConfig::preset(&args.preset).map_err(|e| Failure::config(e.to_string()))?;
    let Some(path) = &args.config else {
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?;
    PipelineConfig::from_toml_over(&text, &base)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

/// Checks an explicitly configured architecture against a loaded network.
fn check_shape(args: &ConfigArgs, cfg: &PipelineConfig, depth: usize, dim: usize, what: &str) -> Result<(), Failure> {
    if args.config.is_none() {
        return Ok(());
    }
    if cfg.network.depth != depth || cfg.network.dim != dim {
        return Err(Failure::shape(format!(
            "config network (depth {}, dim {}) does not match {what} (depth {depth}, dim {dim})",
            cfg.network.depth, cfg.network.dim
        )));
    }
    Ok(())
}

fn exists_and_kept(path: &Path, force: bool) -> bool {
    if path.exists() && !force {
        println!("{} exists; leaving it untouched (pass --force to overwrite)", path.display());
        return true;
    }
    false
}

fn data_failure(e: unitary_core::Error) -> Failure {
    Failure::data(e.to_string())
}

fn limit(raw: RawDataset, requested: usize, what: &str) -> RawDataset {
    if requested == 0 {
        return raw;
    }
    if requested > raw.len() {
        eprintln!(
            "warning: {requested} {what} images requested, only {} available; using all",
            raw.len()
        );
    }
    raw.take(requested)
}

fn load_data(dir: &Path, cfg: &PipelineConfig, dim: usize) -> Result<(PreprocessedDataset, PreprocessedDataset), Failure> {
    let (train, val) = load_mnist_dir(dir).map_err(data_failure)?;
    let train = limit(train, cfg.data.train_samples, "training");
    let val = limit(val, cfg.data.val_samples, "validation");
    Ok((preprocess(&train, dim)?, preprocess(&val, dim)?))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn print_metrics(run_id: &str, seed: u64, m: &EpochMetrics) {
    println!(
        "{run_id} seed {seed} epoch {:>3}: train acc {:.4} loss {:.4} | val acc {:.4} loss {:.4}",
        m.epoch, m.train_acc, m.train_loss, m.val_acc, m.val_loss
    );
}

struct MetricsLog {
    rows: Vec<MetricsRecord>,
    norms: Vec<NormRecord>,
}

impl MetricsLog {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn push(&mut self, run_id: &str, seed: u64, m: &EpochMetrics) {
        print_metrics(run_id, seed, m);
        self.rows.push(MetricsRecord::from_epoch(run_id, seed, m));
        self.norms.push(NormRecord {
            run_id: run_id.into(),
            seed,
            epoch: m.epoch,
            profile: m.norm_profile.clone(),
        });
    }

    /// Writes the CSV and its norm sidecar; returns both paths.
    fn write(&self, csv: &Path) -> Result<Vec<PathBuf>, Failure> {
        write_metrics_csv(csv, &self.rows)?;
        let norms = norms_sidecar_path(csv);
        write_norms(&norms, &self.norms)?;
        Ok(vec![csv.to_path_buf(), norms])
    }
}

#[allow(clippy::too_many_arguments)]
fn train_baseline(
    rec: Recorder,
    data_dir: &Path,
    args: &ConfigArgs,
    seed: u64,
    no_normalize: bool,
    metrics: Option<PathBuf>,
    out: &Path,
    force: bool,
) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    if exists_and_kept(out, force) {
        return Ok(());
    }
    let mut ncfg = cfg.network_config(Mode::Baseline);
    if no_normalize {
        ncfg.normalize = false;
    }
    let tc = cfg.baseline.to_train_config(seed, None);
    tc.validate().map_err(|e| Failure::config(format!("baseline: {e}")))?;
    let (train, val) = load_data(data_dir, &cfg, ncfg.dim)?;
    println!(
        "baseline: depth {} dim {} normalize {} on {} training images",
        ncfg.depth,
        ncfg.dim,
        ncfg.normalize,
        train.len()
    );

    let run_id = if ncfg.normalize { "baseline" } else { "baseline-no-norm" };
    let mut log = MetricsLog::new();
    let mut state = NetworkState::xavier(ncfg, seed)?;
    if metrics.is_some() {
        log.push(run_id, seed, &epoch_metrics(-1, &state, &train, &val)?);
    }
    train_network(&mut state, &train, &tc, |epoch, loss, snapshot| {
        if metrics.is_some() {
            log.push(run_id, seed, &epoch_metrics(epoch as i64, snapshot, &train, &val)?);
        } else {
            println!("epoch {epoch:>3}: train loss {loss:.6}");
        }
        Ok(())
    })?;

    write_state(out, &state)?;
    println!("wrote {}", out.display());
    let mut outputs = vec![out.to_path_buf()];
    if let Some(csv) = &metrics {
        outputs.extend(log.write(csv)?);
    }
    rec.finish(out, &cfg, vec![seed], &mnist_files(data_dir), &outputs)
}

fn capture_cmd(
    rec: Recorder,
    state_path: &Path,
    data_dir: &Path,
    samples: Option<usize>,
    args: &ConfigArgs,
    out: &Path,
    force: bool,
) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    if exists_and_kept(out, force) {
        return Ok(());
    }
    let state = read_state(state_path).map_err(data_failure)?;
    check_shape(args, &cfg, state.config.depth, state.config.dim, "the state")?;
    let requested = samples.unwrap_or(cfg.capture.samples);
    if requested == 0 {
        return Err(Failure::config("--samples must be at least 1"));
    }
    let (raw, _) = load_mnist_dir(data_dir).map_err(data_failure)?;
    if requested > raw.len() {
        eprintln!(
            "warning: {requested} samples requested, dataset has {}; clamping",
            raw.len()
        );
    }
    let data = preprocess(&raw.take(requested), state.config.dim)?;
    let pairs = capture(&state, &data, data.len())?;
    let trace = ActivationTrace::new(
        pairs,
        TraceSource {
            seed: state.seed,
            config_hash: state.config.hash(),
            state_hash: state.content_hash(),
        },
    )?;
    write_trace(out, &trace)?;
    println!(
        "wrote {}: {} layers, {} samples of {}x{} maps",
        out.display(),
        trace.depth(),
        trace.samples(),
        trace.dim(),
        trace.dim()
    );
    let mut inputs = vec![state_path.to_path_buf()];
    inputs.extend(mnist_files(data_dir));
    rec.finish(out, &cfg, vec![state.seed], &inputs, &[out.to_path_buf()])
}

fn residual_csv(rows: &[ResidualRow]) -> String {
    let mut s = String::from("layer,channel,mse,relative_mse,orthogonality_defect,epochs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.layer, r.channel, r.mse, r.relative_mse, r.orthogonality_defect, r.epochs
        );
    }
    s
}

fn project(
    rec: Recorder,
    trace_path: &Path,
    args: &ConfigArgs,
    seed: u64,
    jobs: usize,
    out: &Path,
    force: bool,
) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    if jobs == 0 {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    if exists_and_kept(out, force) {
        return Ok(());
    }
    let trace = read_trace(trace_path).map_err(data_failure)?;
    let pc = cfg.projection_config(seed);
    pc.train
        .validate()
        .map_err(|e| Failure::config(format!("projection: {e}")))?;
    println!(
        "projecting {} layers x 2 channels ({} samples, n = {}) with {jobs} job(s)",
        trace.depth(),
        trace.samples(),
        trace.dim()
    );
    let result = project_network(&trace, &pc, jobs)?;
    write_projection(out, &result, Some(&pc))?;
    let rows = residual_report(&trace, &result)?;
    let csv = sidecar(out, "residuals.csv");
    write_atomic(&csv, residual_csv(&rows).as_bytes())?;
    for r in &rows {
        println!(
            "layer {:>2} {}: mse {:.3e} relative {:.4} epochs {}",
            r.layer, r.channel, r.mse, r.relative_mse, r.epochs
        );
    }
    println!("wrote {} and {}", out.display(), csv.display());
    rec.finish(out, &cfg, vec![seed], &[trace_path.to_path_buf()], &[out.to_path_buf(), csv])?;

    let failed: Vec<String> = result
        .fits
        .iter()
        .filter_map(|f| f.outcome.as_ref().err().map(|e| format!("layer {} {}: {e}", f.layer, f.channel)))
        .collect();
    if !failed.is_empty() {
        return Err(Failure {
            code: EXIT_DIVERGED,
            message: format!("{} fit(s) failed; partial result written:\n  {}", failed.len(), failed.join("\n  ")),
        });
    }
    Ok(())
}

struct UnitaryArgs {
    init: String,
    baseline: Option<PathBuf>,
    data_dir: PathBuf,
    seeds: Vec<u64>,
    epochs: Option<usize>,
    run_id: Option<String>,
    state_out: Option<PathBuf>,
}

fn train_unitary_cmd(
    rec: Recorder,
    a: UnitaryArgs,
    args: &ConfigArgs,
    out: &Path,
    force: bool,
) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    if a.state_out.is_some() && a.seeds.len() > 1 {
        return Err(Failure::config("--state-out needs a single seed"));
    }
    if exists_and_kept(out, force) {
        return Ok(());
    }
    let ncfg = cfg.network_config(Mode::Unitary);
    let mut inputs = mnist_files(&a.data_dir).to_vec();
    let (init, default_id) = if a.init == "xavier" {
        (UnitaryInit::Xavier, "xavier")
    } else {
        let proj_path = PathBuf::from(&a.init);
        let proj = read_projection(&proj_path).map_err(data_failure)?;
        let base_path = a
            .baseline
            .clone()
            .ok_or_else(|| Failure::config("--baseline is required with a projection init (it supplies the head)"))?;
        let base = read_state(&base_path).map_err(data_failure)?;
        if proj.result.dim != ncfg.dim || proj.result.depth() != ncfg.depth {
            return Err(Failure::shape(format!(
                "projection (depth {}, dim {}) does not match config network (depth {}, dim {})",
                proj.result.depth(),
                proj.result.dim,
                ncfg.depth,
                ncfg.dim
            )));
        }
        if base.config.depth != ncfg.depth || base.config.dim != ncfg.dim {
            return Err(Failure::shape(format!(
                "baseline (depth {}, dim {}) does not match config network (depth {}, dim {})",
                base.config.depth, base.config.dim, ncfg.depth, ncfg.dim
            )));
        }
        let layers = proj.result.layer_params().map_err(data_failure)?;
        inputs.push(proj_path);
        inputs.push(base_path);
        (
            UnitaryInit::FromProjection {
                layers,
                head: base.head,
            },
            "projection",
        )
    };
    let run_id = a.run_id.clone().unwrap_or_else(|| default_id.to_string());
    let epochs = a.epochs.unwrap_or(cfg.unitary.epochs);
    let (train, val) = load_data(&a.data_dir, &cfg, ncfg.dim)?;

    let mut log = MetricsLog::new();
    for &seed in &a.seeds {
        let tc = cfg.unitary.to_train_config(seed, None);
        let (state, history) = train_unitary(ncfg.clone(), &tc, epochs, &train, &val, seed, init.clone())?;
        for m in &history {
            log.push(&run_id, seed, m);
        }
        if let Some(path) = &a.state_out {
            write_state(path, &state)?;
        }
    }
    let mut outputs = log.write(out)?;
    println!("wrote {}", out.display());
    if let Some(path) = &a.state_out {
        outputs.push(path.clone());
    }
    rec.finish(out, &cfg, a.seeds.clone(), &inputs, &outputs)
}

fn eval(
    rec: Recorder,
    state_path: &Path,
    data_dir: &Path,
    args: &ConfigArgs,
    run_id: &str,
    out: Option<&Path>,
    force: bool,
) -> Result<(), Failure> {
    let cfg = resolve_config(args)?;
    if let Some(out) = out {
        if exists_and_kept(out, force) {
            return Ok(());
        }
    }
    let state = read_state(state_path).map_err(data_failure)?;
    check_shape(args, &cfg, state.config.depth, state.config.dim, "the state")?;
    let (train, val) = load_data(data_dir, &cfg, state.config.dim)?;
    let mut log = MetricsLog::new();
    log.push(run_id, state.seed, &epoch_metrics(-1, &state, &train, &val)?);
    let Some(out) = out else {
        return Ok(());
    };
    let outputs = log.write(out)?;
    println!("wrote {}", out.display());
    let mut inputs = vec![state_path.to_path_buf()];
    inputs.extend(mnist_files(data_dir));
    rec.finish(out, &cfg, vec![state.seed], &inputs, &outputs)
}

fn report(rec: Recorder, metrics: &[PathBuf], out: &Path, force: bool) -> Result<(), Failure> {
    let fig5 = out.join("fig5.csv");
    if exists_and_kept(&fig5, force) {
        return Ok(());
    }
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    let mut inputs = Vec::new();
    for path in metrics {
        rows.extend(read_metrics_csv(path).map_err(data_failure)?);
        inputs.push(path.clone());
        let side = norms_sidecar_path(path);
        if side.exists() {
            norms.extend(read_norms(&side).map_err(data_failure)?);
            inputs.push(side);
        }
    }
    let outputs = vec![out.join("fig3.csv"), out.join("fig4.csv"), fig5];
    write_atomic(&outputs[0], fig3_csv(&norms).as_bytes())?;
    write_atomic(&outputs[1], fig4_csv(&rows).as_bytes())?;
    write_atomic(&outputs[2], fig5_csv(&fig5_rows(&rows)).as_bytes())?;
    println!("wrote figure data to {}", out.display());
    rec.finish(out, &serde_json::Value::Null, Vec::new(), &inputs, &outputs)
}

/// Where an output recorded at `recorded` lands when its flag value `value`
/// is redirected into `scratch`.
fn redirected(recorded: &Path, values: &[PathBuf], scratch: &Path) -> PathBuf {
    for v in values {
        if let Ok(rest) = recorded.strip_prefix(v) {
            if !rest.as_os_str().is_empty() {
                return scratch.join(v.file_name().unwrap_or_default()).join(rest);
            }
        }
    }
    scratch.join(recorded.file_name().unwrap_or_default())
}

fn replay(manifest_path: &Path) -> Result<(), Failure> {
    let m = read_manifest(manifest_path)?;
    let scratch = tempfile::tempdir().map_err(|e| Failure::data(format!("scratch directory: {e}")))?;
    let mut argv = Vec::with_capacity(m.argv.len() + 2);
    let mut values = Vec::new();
    let mut it = m.argv.iter().peekable();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            it.next();
            continue;
        }
        if arg.starts_with("--config=") {
            continue;
        }
        if m.output_flags.contains(arg) {
            if let Some(v) = it.next() {
                let v = PathBuf::from(v);
                argv.push(arg.clone());
                argv.push(scratch.path().join(v.file_name().unwrap_or_default()).display().to_string());
                values.push(v);
            }
            continue;
        }
        argv.push(arg.clone());
    }
    if !m.config.is_null() {
        let cfg: PipelineConfig = serde_json::from_value(m.config.clone())
            .map_err(|e| Failure::data(format!("{}: config: {e}", manifest_path.display())))?;
        let path = scratch.path().join("replay-config.toml");
        std::fs::write(&path, cfg.to_toml()).map_err(|e| Failure::data(e.to_string()))?;
        argv.push("--config".into());
        argv.push(path.display().to_string());
    }
    std::env::set_current_dir(&m.cwd)
        .map_err(|e| Failure::data(format!("{}: {e}", m.cwd.display())))?;
    println!("replaying {} {}", m.command, argv.join(" "));
    let outcome = crate::run(argv);
    if let Err(f) = &outcome {
        if f.code != EXIT_DIVERGED {
            return outcome;
        }
    }

    let mut mismatches = 0;
    for d in &m.outputs {
        let fresh = redirected(&d.path, &values, scratch.path());
        let same = sha256_file(&fresh).map(|h| h == d.sha256).unwrap_or(false);
        println!("{} {}", if same { "match" } else { "DIFFER" }, d.path.display());
        if !same {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Err(Failure {
            code: EXIT_MISMATCH,
            message: format!("{mismatches} output(s) differ from the manifest"),
        });
    }
    Ok(())
}
