//! Named experiment runners. Each returns its full output text plus the
//! checks that decide the process exit code.

use std::path::Path;

use anyhow::{Context, Result, anyhow, bail};
use dpsecmul_core::accuracy::{converse_check, snr_a};
use dpsecmul_core::distributions::sigma_star_sq;
use dpsecmul_core::matrix_ext::{MatrixDims, matrix_cov_identity_check, simulate_matrix_lmse};
use dpsecmul_core::precision::{SchemeKind, SweepOptions, precision_sweep, slope_estimate};
use dpsecmul_core::privacy::{dp_bound_generic, snr_p};
use dpsecmul_core::schemes::{
    baseline1_epsilon_lower, baseline1_lmse, build_iid_baseline, build_layered, random_code,
};
use dpsecmul_core::{DataLaw, LayeredParams, LinearCode, NoiseKind, SimConfig};
use serde_json::{Map, Value, json};

use crate::config::{Experiment, ExperimentConfig};
use crate::report::{Check, Report, csv_body, json_body, num};

pub fn run(cfg: &ExperimentConfig, scheme_path: Option<&Path>) -> Result<Report> {
    match cfg.experiment {
        Experiment::Tradeoff => run_tradeoff(cfg),
        Experiment::Gap => run_gap(cfg),
        Experiment::Converse => run_converse(cfg),
        Experiment::Precision => run_precision(cfg),
        Experiment::Matrix => run_matrix(cfg),
        Experiment::Eval => {
            let path = scheme_path.ok_or_else(|| anyhow!("eval needs a scheme file"))?;
            eval_scheme(cfg, path)
        }
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        bail!("grid needs 0 < min < max and at least two points");
    }
    let step = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points).map(|i| if i + 1 == points { hi } else { lo * (step * i as f64).exp() }).collect())
}

/// Limit MSE of the optimal scheme at privacy level `epsilon`:
/// `eta^2 s^4 / (eta + s^2)^2` with `s^2 = sigma_star_sq(epsilon)`.
pub fn optimal_limit_mse(epsilon: f64, eta: f64) -> Result<f64> {
    let s2 = sigma_star_sq(epsilon)?;
    let r = s2 / (eta + s2);
    Ok(eta * eta * r * r)
}

/// Optimal limit, i.i.d. staircase and complex three-node curves.
pub fn run_tradeoff(cfg: &ExperimentConfig) -> Result<Report> {
    let eta: f64 = cfg.get("eta")?;
    let t: usize = cfg.get("t")?;
    let n_nodes: usize = cfg.get("n_nodes")?;
    let eps = log_grid(cfg.get("eps_min")?, cfg.get("eps_max")?, cfg.get("eps_points")?)?;
    let sig = log_grid(cfg.get("sigma_sq_min")?, cfg.get("sigma_sq_max")?, cfg.get("sigma_points")?)?;
    if t == 0 {
        bail!("t must be positive");
    }

    let mut rows = Vec::new();
    let mut ordered = true;
    let mut worst_margin = f64::INFINITY;
    for &e in &eps {
        let opt = optimal_limit_mse(e, eta)?;
        // t colluders compose their per-node budgets.
        let iid = snr_a(&build_iid_baseline(n_nodes, e / t as f64, eta)?)?.lmse;
        ordered &= opt <= iid;
        worst_margin = worst_margin.min(iid - opt);
        rows.push(vec!["optimal".into(), num(e), num(opt)]);
        rows.push(vec!["iid_staircase".into(), num(e), num(iid)]);
    }
    let mut worse_side = true;
    for &s in &sig {
        let e_bar = baseline1_epsilon_lower(s, eta)?;
        let mse = baseline1_lmse(s, eta)?;
        worse_side &= optimal_limit_mse(e_bar, eta)? <= mse;
        rows.push(vec!["complex_three_node".into(), num(e_bar), num(mse)]);
    }
    let body = csv_body(cfg, &["curve", "epsilon", "mse"], &rows)?;
    Ok(Report {
        body,
        checks: vec![
            Check::new(
                "optimal <= iid staircase at every epsilon",
                ordered,
                format!("smallest margin {worst_margin:e}"),
            ),
            Check::new("complex three-node curve on the worse side", worse_side, ""),
        ],
    })
}

/// One row of the gap sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub t: usize,
    pub n: f64,
    pub snr_p: f64,
    pub snr_a: f64,
    pub gap_vs_target: f64,
    pub gap_vs_actual: f64,
}

/// Layered code of the gap sweep: `x = sqrt(eta)`, `alpha1 = 1/n`,
/// `alpha2 = alpha1 ln(1/alpha1)`.
pub fn gap_code(t: usize, n: f64, eta: f64) -> Result<LinearCode> {
    let a1 = 1.0 / n;
    let p = LayeredParams::new(t, eta.sqrt(), a1, a1 * (1.0 / a1).ln());
    Ok(build_layered(&p, NoiseKind::UnitGaussianAnalysis, eta)?)
}

pub fn gap_rows(ts: &[usize], ns: &[f64], eta: f64) -> Result<Vec<GapRow>> {
    let mut out = Vec::new();
    for &t in ts {
        for &n in ns {
            let code = gap_code(t, n, eta)?;
            let p = snr_p(&code, t)?.snr_p.value();
            let a = snr_a(&code)?.snr_a.value();
            out.push(GapRow {
                t,
                n,
                snr_p: p,
                snr_a: a,
                // The SNR_p target is 1.
                gap_vs_target: 4.0 - (1.0 + a),
                gap_vs_actual: (1.0 + p).powi(2) - (1.0 + a),
            });
        }
    }
    Ok(out)
}

pub fn run_gap(cfg: &ExperimentConfig) -> Result<Report> {
    let eta: f64 = cfg.get("eta")?;
    let ts: Vec<usize> = cfg.get_list("t_values")?;
    let ns: Vec<f64> = cfg.get_list("n_values")?;
    if ts.is_empty() || ns.is_empty() || ns.iter().any(|&n| n <= 1.0) {
        bail!("need t values and n values above 1");
    }
    let rows = gap_rows(&ts, &ns, eta)?;
    let dir = cfg.get_str("scheme_dir")?;
    if !dir.is_empty() {
        std::fs::create_dir_all(dir)?;
        for r in &rows {
            let path = Path::new(dir).join(format!("layered_t{}_n{}.json", r.t, r.n));
            std::fs::write(&path, gap_code(r.t, r.n, eta)?.to_json())
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let mut checks = Vec::new();
    for &t in &ts {
        let g: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.gap_vs_actual).collect();
        let mono = g.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::new(format!("t={t}: gap decreases in n"), mono, format!("{g:?}")));
    }
    let last = |t: usize| rows.iter().rev().find(|r| r.t == t).map(|r| r.gap_vs_actual);
    let reaches_anchor = ns.last().is_some_and(|&n| n >= 1e4);
    if let (Some(g2), true) = (last(2), reaches_anchor) {
        checks.push(Check::new("t=2: gap at largest n <= 1", g2 <= 1.0, num(g2)));
        if let Some(g3) = last(3) {
            checks.push(Check::new("t=2 gap below t=3 gap at largest n", g2 < g3, format!("{g2} vs {g3}")));
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                num(r.n),
                num(r.snr_p),
                num(r.snr_a),
                num(r.gap_vs_target),
                num(r.gap_vs_actual),
            ]
        })
        .collect();
    let header = ["t", "n", "snr_p_actual", "snr_a", "gap_vs_target", "gap_vs_actual"];
    Ok(Report { body: csv_body(cfg, &header, &table)?, checks })
}

/// Summary of the converse suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverseSummary {
    pub n_codes: usize,
    pub violations: usize,
    pub square_violations: usize,
    /// Sorted `(1 + SNR_a) / min split product`; 1 means tight.
    pub tightness: Vec<f64>,
}

pub fn converse_summary(seed: u64, n_codes: usize, t_max: usize, eta: f64) -> Result<ConverseSummary> {
    let (mut violations, mut square_violations) = (0, 0);
    let mut tightness = Vec::with_capacity(n_codes);
    for i in 0..n_codes {
        let (t, code) = random_code(seed, i as u64, t_max, eta)?;
        let rec = converse_check(&code, t)?;
        violations += usize::from(!rec.holds);
        square_violations += usize::from(!rec.square_holds);
        tightness.push(if rec.rhs.is_infinite() { 0.0 } else { rec.lhs / rec.rhs });
    }
    tightness.sort_by(f64::total_cmp);
    Ok(ConverseSummary { n_codes, violations, square_violations, tightness })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn run_converse(cfg: &ExperimentConfig) -> Result<Report> {
    let s = converse_summary(cfg.seed, cfg.get("n_codes")?, cfg.get("t_max")?, cfg.get("eta")?)?;
    let mut fields = Map::new();
    fields.insert("n_codes".into(), json!(s.n_codes));
    fields.insert("violations".into(), json!(s.violations));
    fields.insert("square_violations".into(), json!(s.square_violations));
    let q: Map<String, Value> = [("q50", 0.5), ("q90", 0.9), ("q99", 0.99), ("max", 1.0)]
        .iter()
        .map(|&(k, p)| (k.to_string(), json!(quantile(&s.tightness, p))))
        .collect();
    fields.insert("tightness".into(), Value::Object(q));
    let checks = vec![
        Check::new("no split-product violations", s.violations == 0, s.violations.to_string()),
        Check::new("no square-bound violations", s.square_violations == 0, s.square_violations.to_string()),
    ];
    Ok(Report { body: json_body(cfg, fields)?, checks })
}

fn scheme_kind(name: &str, t: usize) -> Result<SchemeKind> {
    match name {
        "shamir_real" => Ok(SchemeKind::ShamirReal(t)),
        "layered" => Ok(SchemeKind::Layered(t)),
        other => bail!("unknown scheme {other:?}; use shamir_real or layered"),
    }
}

pub fn run_precision(cfg: &ExperimentConfig) -> Result<Report> {
    let t: usize = cfg.get("t")?;
    let eta: f64 = cfg.get("eta")?;
    let x: f64 = cfg.get("x")?;
    let deltas: Vec<f64> = cfg.get_list::<i32>("delta_log2")?.iter().map(|&k| 2f64.powi(k)).collect();
    let opts = SweepOptions {
        min_samples: cfg.get("min_samples")?,
        samples_per_inv_delta: cfg.get("samples_per_inv_delta")?,
        workers: cfg.workers,
        max_bits: cfg.get("max_bits")?,
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let names: Vec<String> = cfg.get_list("schemes")?;
    for name in &names {
        let kind = scheme_kind(name, t)?;
        let pts = precision_sweep(kind, &deltas, eta, x, cfg.seed, opts)?;
        for p in &pts {
            rows.push(vec![
                "point".into(),
                name.clone(),
                t.to_string(),
                num(p.delta),
                p.min_bits.to_string(),
                num(p.overload_rate),
                num(p.mse),
                num(p.stderr),
                String::new(),
                String::new(),
            ]);
        }
        let mono = pts.windows(2).all(|w| w[0].min_bits <= w[1].min_bits);
        checks.push(Check::new(format!("{name}: bits non-increasing in delta"), mono, ""));
        let curve: Vec<(f64, u32)> = pts.iter().map(|p| (p.delta, p.min_bits)).collect();
        let (slope, se) = match slope_estimate(&curve) {
            Ok(f) => (num(f.slope), num(f.stderr)),
            Err(_) => (String::new(), String::new()),
        };
        let mut summary = vec!["slope".into(), name.clone(), t.to_string()];
        summary.extend(std::iter::repeat_n(String::new(), 5));
        summary.extend([slope, se]);
        rows.push(summary);
    }
    let header = [
        "row", "scheme", "t", "delta", "min_bits", "overload_rate", "mse", "stderr", "slope",
        "slope_stderr",
    ];
    Ok(Report { body: csv_body(cfg, &header, &rows)?, checks })
}

/// Scalar code of the matrix experiment.
pub fn matrix_code(t: usize, x: f64, alpha1: f64, eta: f64) -> Result<LinearCode> {
    let p = LayeredParams::new(t, x, alpha1, alpha1.powf(2.0 / 3.0));
    Ok(build_layered(&p, NoiseKind::UnitGaussianAnalysis, eta)?)
}

pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Report> {
    let eta: f64 = cfg.get("eta")?;
    let code = matrix_code(cfg.get("t")?, cfg.get("x")?, cfg.get("alpha1")?, eta)?;
    let dims = MatrixDims::new(cfg.get("m")?, cfg.get("l")?, cfg.get("k")?)?;
    let sim = SimConfig::new(cfg.get("n_samples")?, cfg.seed, cfg.workers);
    let res = simulate_matrix_lmse(&code, dims, DataLaw::Gaussian { eta }, sim)?;
    let ident = matrix_cov_identity_check(&code, dims.l)?;
    let l = dims.l as f64;
    let rows: Vec<Vec<String>> = res
        .per_entry
        .iter()
        .enumerate()
        .map(|(e, r)| {
            vec![
                (e / dims.k).to_string(),
                (e % dims.k).to_string(),
                num(r.mse),
                num(r.stderr),
                num(res.scalar_lmse),
                num(r.mse / res.scalar_lmse),
            ]
        })
        .collect();
    // Averaging entries cannot raise the standard error above the mean one.
    let cnt = res.per_entry.len() as f64;
    let mean = res.per_entry.iter().map(|r| r.mse).sum::<f64>() / cnt;
    let mean_se = res.per_entry.iter().map(|r| r.stderr).sum::<f64>() / cnt;
    let want = l * res.scalar_lmse;
    let checks = vec![
        Check::new("K1 = l K1_scalar identity", ident.max_rel_err <= 1e-12, num(ident.max_rel_err)),
        Check::new(
            "mean entry MSE within 3 SE of l x scalar LMSE",
            (mean - want).abs() <= 3.0 * mean_se,
            format!("{mean} vs {want} (se {mean_se})"),
        ),
    ];
    let header = ["row", "col", "mse", "stderr", "scalar_lmse", "ratio_to_scalar"];
    Ok(Report { body: csv_body(cfg, &header, &rows)?, checks })
}

/// Reads a scheme document, reporting parse failures with line and column.
pub fn load_scheme(path: &Path) -> Result<LinearCode> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    LinearCode::from_json(&text).map_err(|e| {
        anyhow!("parse error in {} at line {} column {}: {e}", path.display(), e.line(), e.column())
    })
}

pub fn eval_scheme(cfg: &ExperimentConfig, path: &Path) -> Result<Report> {
    let code = load_scheme(path)?;
    let t: usize = cfg.get("t")?;
    let mut privacy = snr_p(&code, t)?;
    let dp = dp_bound_generic(&code, t)?;
    privacy.dp_epsilon_bound = dp.is_finite().then_some(dp);
    let accuracy = snr_a(&code)?;
    let mut fields = Map::new();
    fields.insert("n_nodes".into(), json!(code.n_nodes()));
    fields.insert("privacy".into(), serde_json::to_value(&privacy)?);
    fields.insert("accuracy".into(), serde_json::to_value(&accuracy)?);
    fields.insert("dp_bound".into(), if dp.is_finite() { json!(dp) } else { json!("inf") });
    let mut checks = Vec::new();
    if code.n_nodes() <= 2 * t {
        let rec = converse_check(&code, t)?;
        checks.push(Check::new("converse holds", rec.holds && rec.square_holds, ""));
        fields.insert("converse".into(), serde_json::to_value(&rec)?);
    } else {
        fields.insert(
            "notice".into(),
            json!(format!("converse omitted: N = {} > 2t = {}", code.n_nodes(), 2 * t)),
        );
    }
    Ok(Report { body: json_body(cfg, fields)?, checks })
}
