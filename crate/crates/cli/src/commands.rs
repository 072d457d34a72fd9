use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use eaclutch::contact::{fit_contact_model, model_capacitance};
use eaclutch::dynamics::{
    capacity_vs_frequency, capacity_with_lambda, fit_lambda_law, lambda_ea, parameter_sweep, run_metric, sci,
    ClutchConfig, LambdaLaw, ReleaseMetric, SimResult, SweepAxis, SweepMetric,
};
use eaclutch::polarization::{cole_cole_kappa, fit_cole_cole, DielectricModel};
use eaclutch::traces::{analyze_files, fit_voltage_exponent, AnalysisOptions, TraceSummary};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{apply_override, config_hash, load_document, parse_config, RunManifest};
use crate::{Cli, CliError, Command, FitKind, ReleaseLevel, SimKind};

const DESIGN_SWEEPS: &str = include_str!("../../../data/design_sweeps.json");

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut doc = load_document(&cli.config)?;
    for o in &cli.overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg = parse_config(doc)?;
    if let Command::Simulate { kind, threshold, metric } = &cli.command {
        if let Some(th) = *threshold {
            match kind {
                SimKind::Engage => cfg.simulation.engage_threshold = th,
                SimKind::Release => cfg.simulation.release_force_ratio = th,
            }
        }
        if let Some(m) = metric {
            cfg.simulation.release_metric = match m {
                ReleaseLevel::Ninety => ReleaseMetric::Ninety,
                ReleaseLevel::Ten => ReleaseMetric::Ten,
            };
        }
        cfg.validate()?;
    }

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", cli.out.display())))?;
    RunManifest {
        config_path: cli.config.clone(),
        command: std::env::args().skip(1).collect(),
        overrides: cli.overrides.clone(),
        output_dir: cli.out.clone(),
        seed: None,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&cfg),
    }
    .write(&cli.out)?;

    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate { kind, .. } => simulate(&cfg, *kind, out),
        Command::Sweep { axes, metric, spec } => match spec {
            Some(s) => sweep_spec(&cfg, s, out),
            None => {
                let parsed = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>, _>>()?;
                if parsed.is_empty() {
                    return Err(CliError::Usage("sweep needs --axis or --spec".into()));
                }
                let metric = sweep_metric(*metric);
                let name = format!(
                    "sweep_{}_{}",
                    metric_name(metric),
                    parsed.iter().map(|(a, _)| a.name()).collect::<Vec<_>>().join("_")
                );
                run_sweep(&cfg, &name, &parsed, metric, out)
            }
        },
        Command::Fit { kind, data } => fit(&cfg, *kind, data, out),
        Command::Analyze { files, cutoff } => analyze(&cfg, files, *cutoff, out),
        Command::Bode { freqs, range } => bode(&cfg, freqs, range.as_deref(), out),
    }
}

/// Stdout line; a closed pipe is not an error for a results printout.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(dir.join(name), text + "\n").map_err(runtime)
}

fn sweep_metric(kind: SimKind) -> SweepMetric {
    match kind {
        SimKind::Engage => SweepMetric::Engage,
        SimKind::Release => SweepMetric::Release,
    }
}

fn metric_name(m: SweepMetric) -> &'static str {
    match m {
        SweepMetric::Engage => "engage",
        SweepMetric::Release => "release",
    }
}

fn simulate(cfg: &ClutchConfig, kind: SimKind, out: &Path) -> Result<(), CliError> {
    let metric = sweep_metric(kind);
    let res = run_metric(cfg, metric)?;
    let name = metric_name(metric);
    res.trace.write_csv(create(out, &format!("{name}_trace.csv"))?)?;
    let summary = sim_summary(name, &res);
    write_json(out, &format!("{name}_summary.json"), &summary)?;
    emit(&serde_json::to_string_pretty(&summary).expect("json value serializes"));
    Ok(())
}

fn sim_summary(kind: &str, res: &SimResult) -> Value {
    json!({
        "kind": kind,
        "t_engage_s": res.t_engage,
        "t_release_s": res.t_release,
        "termination_reason": res.termination,
        "initial_gap_m": res.initial_gap,
        "settled_gap_m": res.final_gap,
        "capacity_n": res.capacity,
        "initial_load_cell_force_n": res.initial_load_cell_force,
        "lift_off": res.lift_off,
    })
}

fn parse_axis(spec: &str) -> Result<(SweepAxis, Vec<f64>), CliError> {
    let (name, values) =
        spec.split_once('=').ok_or_else(|| CliError::Usage(format!("axis '{spec}' is not name=v1,v2,...")))?;
    let axis = SweepAxis::parse(name.trim()).map_err(|e| CliError::Usage(e.to_string()))?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("axis '{name}': bad value '{v}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage(format!("axis '{name}' has no values")));
    }
    Ok((axis, values))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSpec {
    sweeps: Vec<SweepEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepEntry {
    name: String,
    metric: SweepMetric,
    axes: Vec<AxisEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisEntry {
    axis: String,
    values: Vec<f64>,
}

fn sweep_spec(cfg: &ClutchConfig, source: &str, out: &Path) -> Result<(), CliError> {
    let text = if source == "design" {
        DESIGN_SWEEPS.to_string()
    } else {
        std::fs::read_to_string(source).map_err(|e| CliError::Usage(format!("cannot read sweep spec {source}: {e}")))?
    };
    let spec: SweepSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid sweep spec {source}: {e}")))?;
    if spec.sweeps.is_empty() {
        return Err(CliError::Usage(format!("sweep spec {source} lists no sweeps")));
    }
    let mut jobs = Vec::new();
    for s in &spec.sweeps {
        if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(CliError::Usage(format!("sweep name '{}' must be alphanumeric, '_' or '-'", s.name)));
        }
        let mut axes = Vec::new();
        for a in &s.axes {
            let axis = SweepAxis::parse(&a.axis).map_err(|e| CliError::Usage(e.to_string()))?;
            if a.values.is_empty() {
                return Err(CliError::Usage(format!("sweep '{}': axis '{}' has no values", s.name, a.axis)));
            }
            axes.push((axis, a.values.clone()));
        }
        if axes.is_empty() {
            return Err(CliError::Usage(format!("sweep '{}' has no axes", s.name)));
        }
        jobs.push((s.name.as_str(), axes, s.metric));
    }
    for (name, axes, metric) in &jobs {
        run_sweep(cfg, name, axes, *metric, out)?;
    }
    Ok(())
}

fn run_sweep(
    cfg: &ClutchConfig,
    name: &str,
    axes: &[(SweepAxis, Vec<f64>)],
    metric: SweepMetric,
    out: &Path,
) -> Result<(), CliError> {
    let cells: usize = axes.iter().map(|(_, v)| v.len()).product();
    eprintln!("{name}: {cells} cells");
    let table = parameter_sweep(cfg, axes, metric)?;
    table.write_csv(create(out, &format!("{name}.csv"))?)?;
    let failed = table.rows.iter().filter(|r| r.value.is_none()).count();
    eprintln!("{name}: done, {failed} without a value");
    Ok(())
}

fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let got = rdr.headers().map_err(runtime)?.clone();
    if got.len() != 2 || got.get(0).map(str::trim) != Some(header[0]) || got.get(1).map(str::trim) != Some(header[1]) {
        return Err(CliError::Runtime(format!(
            "format error: {} has columns {:?}, expected {},{}",
            path.display(),
            got.iter().collect::<Vec<_>>(),
            header[0],
            header[1]
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Runtime(format!("format error: {}: {e}", path.display())))?;
        let num = |j: usize| {
            rec.get(j).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| {
                CliError::Runtime(format!("format error: {} row {}: column {} is not a number", path.display(), i + 2, j + 1))
            })
        };
        rows.push((num(0)?, num(1)?));
    }
    Ok(rows)
}

fn write_model_csv(out: &Path, name: &str, header: [&str; 3], rows: &[(f64, f64, f64)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(out, name)?);
    w.write_record(header).map_err(runtime)?;
    for &(x, d, m) in rows {
        w.write_record([sci(x), sci(d), sci(m)]).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn fit(cfg: &ClutchConfig, kind: FitKind, data_path: &Path, out: &Path) -> Result<(), CliError> {
    let (name, result, header, rows) = match kind {
        FitKind::ColeCole => {
            let data = read_pairs(data_path, ["frequency_hz", "kappa_real"])?;
            let f = fit_cole_cole(&data, cfg.dielectric.kappa_inf)?;
            let model = DielectricModel { kappa_s: f.kappa_s, tau: f.tau, alpha: f.alpha, ..cfg.dielectric };
            let rows: Vec<_> = data
                .iter()
                .map(|&(hz, k)| (hz, k, cole_cole_kappa(&model, 2.0 * std::f64::consts::PI * hz).re))
                .collect();
            let result = json!({
                "params": {"kappa_inf": f.kappa_inf, "kappa_s": f.kappa_s, "tau_s": f.tau, "alpha": f.alpha},
                "std_errors": {"kappa_s": f.std_errors[0], "tau_s": f.std_errors[1], "alpha": f.std_errors[2]},
                "residual_norm": f.residual_norm,
                "clamped": f.clamped,
            });
            ("cole_cole", result, ["frequency_hz", "kappa_real", "model_kappa_real"], rows)
        }
        FitKind::Contact => {
            let data = read_pairs(data_path, ["force_n", "capacitance_f"])?;
            let kappa = cfg.dielectric.kappa_s;
            let f = fit_contact_model(&data, &cfg.geometry, kappa)?;
            let rows: Vec<_> =
                data.iter().map(|&(n, c)| (n, c, model_capacitance(n, &f.model, &cfg.geometry, kappa))).collect();
            let result = json!({
                "params": {"stiffness_k": f.model.stiffness_k, "sigma_d_m": f.model.sigma_d},
                "std_errors": {"stiffness_k": f.std_errors[0], "sigma_d_m": f.std_errors[1]},
                "residual_norm": f.residual_norm,
                "air_gaps_m": f.gaps,
                "non_monotone": f.non_monotone,
                "clamped": f.clamped,
            });
            ("contact", result, ["force_n", "capacitance_f", "model_capacitance_f"], rows)
        }
        FitKind::Lambda => {
            let data = read_pairs(data_path, ["voltage_v", "capacity_n"])?;
            let f = fit_lambda_law(cfg, &data)?;
            let law = LambdaLaw::Linear { intercept: f.intercept, slope: f.slope };
            let rows = data
                .iter()
                .map(|&(v, c)| Ok((v, c, capacity_with_lambda(cfg, v, lambda_ea(v, &law))?)))
                .collect::<Result<Vec<_>, eaclutch::Error>>()?;
            let result = json!({
                "params": {"intercept": f.intercept, "slope_per_v": f.slope},
                "std_errors": {"intercept": f.std_errors[0], "slope_per_v": f.std_errors[1]},
                "residual_norm": f.residual_norm,
                "point_lambdas": f.points,
            });
            ("lambda", result, ["voltage_v", "capacity_n", "model_capacity_n"], rows)
        }
        FitKind::VoltageExponent => {
            let data = read_pairs(data_path, ["voltage_v", "capacity_n"])?;
            let f = fit_voltage_exponent(&data)?;
            let rows: Vec<_> = data.iter().map(|&(v, c)| (v, c, f.c * v.powf(f.n))).collect();
            // the fit is in log space, so the residual is too
            let residual_norm = rows.iter().map(|r| (r.1.ln() - r.2.ln()).powi(2)).sum::<f64>().sqrt();
            let result = json!({
                "params": {"c": f.c, "n": f.n},
                "std_errors": {"c": f.c_std, "n": f.n_std},
                "residual_norm": residual_norm,
                "r_squared": f.r_squared,
            });
            ("voltage_exponent", result, ["voltage_v", "capacity_n", "model_capacity_n"], rows)
        }
    };
    write_model_csv(out, &format!("fit_{name}_model.csv"), header, &rows)?;
    let mut result = result;
    result["kind"] = json!(name);
    write_json(out, &format!("fit_{name}.json"), &result)?;
    emit(&serde_json::to_string_pretty(&result).expect("json value serializes"));
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, sci)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and sample standard deviation.
pub fn stats(values: &[f64]) -> Stats {
    let n = values.len();
    let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Stats { mean, std, count: n }
}

fn analyze(cfg: &ClutchConfig, files: &[PathBuf], cutoff: Option<f64>, out: &Path) -> Result<(), CliError> {
    if files.is_empty() {
        return Err(CliError::Usage("analyze needs at least one trace file".into()));
    }
    let mut opts = AnalysisOptions::default();
    if let Some(c) = cutoff {
        if !(c > 0.0) {
            return Err(CliError::Usage(format!("--cutoff must be positive, got {c}")));
        }
        opts.cutoff = c;
    }
    let results = analyze_files(files, cfg, &opts);

    let mut w = csv::Writer::from_writer(create(out, "analysis.csv")?);
    w.write_record([
        "file",
        "engagement_s",
        "engagement_qualified",
        "engagement_rounded_up",
        "release90_s",
        "release10_s",
        "slip_pct",
        "preload_n",
        "preload_clamped",
        "status",
        "notes",
    ])
    .map_err(runtime)?;
    let mut ok: Vec<&TraceSummary> = Vec::new();
    let mut failed = 0;
    for (path, res) in files.iter().zip(&results) {
        let file = path.display().to_string();
        match res {
            Ok(s) => {
                ok.push(s);
                w.write_record([
                    file,
                    opt(s.engagement_s),
                    s.engagement_qualified.to_string(),
                    s.engagement_rounded_up.to_string(),
                    opt(s.release90_s),
                    opt(s.release10_s),
                    opt(s.slip_pct),
                    opt(s.preload_n),
                    s.preload_clamped.to_string(),
                    "ok".into(),
                    s.notes.join("; "),
                ])
                .map_err(runtime)?;
            }
            Err(e) => {
                failed += 1;
                let mut rec = vec![file];
                rec.extend(std::iter::repeat_n(String::new(), 8));
                rec.push(format!("error: {e}"));
                rec.push(String::new());
                w.write_record(&rec).map_err(runtime)?;
            }
        }
    }
    w.flush().map_err(runtime)?;

    type Getter = fn(&TraceSummary) -> Option<f64>;
    let metrics: [(&str, Getter); 5] = [
        ("engagement_s", |s| s.engagement_s),
        ("release90_s", |s| s.release90_s),
        ("release10_s", |s| s.release10_s),
        ("slip_pct", |s| s.slip_pct),
        ("preload_n", |s| s.preload_n),
    ];
    let mut w = csv::Writer::from_writer(create(out, "analysis_summary.csv")?);
    w.write_record(["metric", "mean", "std", "count"]).map_err(runtime)?;
    for (name, get) in metrics {
        let values: Vec<f64> = ok.iter().filter_map(|s| get(s)).collect();
        let st = stats(&values);
        emit(&format!("{name}: mean {} (σ = {}, n = {})", sci(st.mean), sci(st.std), st.count));
        w.write_record([name.to_string(), sci(st.mean), sci(st.std), st.count.to_string()]).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} trace files failed", files.len())));
    }
    Ok(())
}

fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("range '{spec}' is not fmin:fmax:n"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !(lo > 0.0) || !(hi >= lo) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| lo * (step * i as f64).exp()).collect())
}

fn bode(cfg: &ClutchConfig, freqs: &[f64], range: Option<&str>, out: &Path) -> Result<(), CliError> {
    let freqs = match range {
        Some(r) => parse_range(r)?,
        None => freqs.to_vec(),
    };
    if freqs.is_empty() {
        return Err(CliError::Usage("bode needs --freqs or --range".into()));
    }
    if freqs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(CliError::Usage("frequencies must be positive".into()));
    }
    eprintln!("bode: {} frequencies", freqs.len());
    let resp = capacity_vs_frequency(cfg, &freqs)?;
    let mut w = csv::Writer::from_writer(create(out, "bode.csv")?);
    w.write_record(["frequency_hz", "capacity_n", "ratio_to_dc", "mean_contact_n", "mean_adhesion_n", "unsettled"])
        .map_err(runtime)?;
    for p in &resp.points {
        w.write_record([
            sci(p.frequency),
            sci(p.capacity),
            sci(p.capacity / resp.dc_capacity),
            sci(p.mean_contact),
            sci(p.mean_adhesion),
            p.unsettled.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    let summary = json!({
        "dc_capacity_n": resp.dc_capacity,
        "minus_3db_hz": resp.minus_3db,
        "unsettled_points": resp.points.iter().filter(|p| p.unsettled).count(),
    });
    write_json(out, "bode_summary.json", &summary)?;
    emit(&serde_json::to_string_pretty(&summary).expect("json value serializes"));
    Ok(())
}
