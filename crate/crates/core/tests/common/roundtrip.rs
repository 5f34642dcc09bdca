//! Write-then-read equality for every on-disk format.

use std::path::Path;

use unitary_core::data::{load_idx, synth_orthogonal_trace, write_idx, RawDataset, SynthSpec};
use unitary_core::formats::{read_projection, read_state, read_trace, write_projection, write_state, write_trace};
use unitary_core::metrics::{read_metrics_csv, read_norms, write_metrics_csv, write_norms, MetricsRecord, NormRecord};
use unitary_core::network::{Mode, NetworkConfig, NetworkState, NormProfile};
use unitary_core::projection::{project_network, FitEntry};
use unitary_core::Channel;

use super::planted::recovery_config;

fn check<T: PartialEq + std::fmt::Debug>(what: &str, a: &T, b: &T) -> Result<(), String> {
    if a == b {
        Ok(())
    } else {
        Err(format!("{what} differs after round trip"))
    }
}

pub fn idx(dir: &Path) -> Result<(), String> {
    let raw = RawDataset {
        rows: 28,
        cols: 28,
        pixels: (0..2 * 784).map(|i| (i * 37 % 256) as u8).collect(),
        labels: vec![3, 9],
    };
    let (ip, lp) = (dir.join("fixture-images"), dir.join("fixture-labels"));
    write_idx(&ip, &lp, &raw).map_err(|e| e.to_string())?;
    let back = load_idx(&ip, &lp).map_err(|e| e.to_string())?;
    check("idx pixels", &back.pixels, &raw.pixels)?;
    check("idx labels", &back.labels, &raw.labels)
}

pub fn trace(dir: &Path) -> Result<(), String> {
    let t = synth_orthogonal_trace(SynthSpec::new(3, 5, 17, 4)).map_err(|e| e.to_string())?.trace;
    let p = dir.join("trace.bin");
    write_trace(&p, &t).map_err(|e| e.to_string())?;
    check("trace", &read_trace(&p).map_err(|e| e.to_string())?, &t)
}

pub fn state(dir: &Path) -> Result<(), String> {
    for (mode, normalize) in [(Mode::Baseline, true), (Mode::Baseline, false), (Mode::Unitary, false)] {
        let cfg = NetworkConfig { depth: 3, dim: 5, mode, normalize };
        let s = NetworkState::xavier(cfg, 11).map_err(|e| e.to_string())?;
        let p = dir.join("state.bin");
        write_state(&p, &s).map_err(|e| e.to_string())?;
        check("state", &read_state(&p).map_err(|e| e.to_string())?, &s)?;
    }
    Ok(())
}

pub fn projection(dir: &Path) -> Result<(), String> {
    let t = synth_orthogonal_trace(SynthSpec::new(2, 5, 40, 5)).map_err(|e| e.to_string())?.trace;
    let mut cfg = recovery_config(5);
    cfg.train.epochs = 3;
    let mut result = project_network(&t, &cfg, 1).map_err(|e| e.to_string())?;
    let p = dir.join("proj.bin");
    write_projection(&p, &result, Some(&cfg)).map_err(|e| e.to_string())?;
    let back = read_projection(&p).map_err(|e| e.to_string())?;
    check("projection", &back.result, &result)?;
    check("projection config", &back.config, &Some(cfg))?;

    // A failed fit survives too, with its message.
    result.fits[1] = FitEntry {
        layer: 0,
        channel: Channel::Im,
        seed: result.fits[1].seed,
        outcome: Err("diverged".into()),
    };
    write_projection(&p, &result, None).map_err(|e| e.to_string())?;
    let back = read_projection(&p).map_err(|e| e.to_string())?;
    check("partial projection", &back.result, &result)?;
    check("partial flag", &back.result.partial(), &true)
}

pub fn metrics(dir: &Path) -> Result<(), String> {
    let rows = vec![
        MetricsRecord {
            run_id: "xavier".into(),
            seed: 0,
            epoch: -1,
            train_acc: Some(0.1),
            val_acc: Some(0.0975),
            train_loss: Some(2.302585092994046),
            val_loss: Some(1.0 / 3.0),
        },
        MetricsRecord {
            run_id: "proj,ection".into(),
            seed: 3,
            epoch: 7,
            train_acc: None,
            val_acc: Some(0.9),
            train_loss: None,
            val_loss: Some(1e-300),
        },
    ];
    let p = dir.join("metrics.csv");
    write_metrics_csv(&p, &rows).map_err(|e| e.to_string())?;
    check("metrics csv", &read_metrics_csv(&p).map_err(|e| e.to_string())?, &rows)?;

    let norms = vec![NormRecord {
        run_id: "xavier".into(),
        seed: 0,
        epoch: -1,
        profile: NormProfile {
            post_tanh: vec![1.5, 0.1 + 0.2],
            pre_tanh: vec![2.0, 1.0 / 7.0],
            input: 3.25,
        },
    }];
    let q = dir.join("metrics.norms.json");
    write_norms(&q, &norms).map_err(|e| e.to_string())?;
    check("norm sidecar", &read_norms(&q).map_err(|e| e.to_string())?, &norms)
}
