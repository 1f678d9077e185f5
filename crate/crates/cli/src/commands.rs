//! One function per subcommand, each returning an [`Output`].

use std::fs::File;
use std::io::BufReader;

use serde_json::{json, Value};

use hierfss::exactrg::{
    locate_effective_critical, read_checkpoint, run_pipeline, save_checkpoint, zero_mode_observables, ObservableRequest, ScanConfig,
};
use hierfss::lattice::{free_susceptibility, mass_floor, resolvent};
use hierfss::pertflow::{
    amplitude, bleher_sinai_critical, effective_critical_point, fbc_critical_shift, flow, nu_c, predicted_susceptibility, renormalized_mass,
    scale_set, ScaleSet, Window,
};
use hierfss::profiles::f0_closed_form;
use hierfss::profiles::profile_row;
use hierfss::saw::{saw_chi_exact, saw_window_ratio, wsaw_window_ratio};
use hierfss::{BoundaryCondition, FlowParams, LatticeSpec, MCConfig, ObservableSet, QuadratureConfig};

use crate::accept::{run_suite, AcceptOptions, Suite};
use crate::config::RunConfig;
use crate::record::{csv_table, emit, render, Output};
use crate::{CliError, EXIT_FAIL, EXIT_OK};

/// Stride between replicate seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

fn quad(cfg: &RunConfig) -> QuadratureConfig {
    let mut q = QuadratureConfig::default();
    if let Some(t) = cfg.tol {
        q.rel_tol = t;
    }
    q
}

fn expect_action(cfg: &RunConfig, allowed: &[&str]) -> Result<String, CliError> {
    let a = cfg.action.clone().unwrap_or_else(|| allowed.first().copied().unwrap_or("").to_string());
    if allowed.is_empty() && cfg.action.is_none() || allowed.contains(&a.as_str()) {
        Ok(a)
    } else {
        Err(CliError::Usage(format!(
            "`{}` does not support `{a}` (expected one of {allowed:?})",
            cfg.command
        )))
    }
}

/// Runs the configured subcommand and writes its record.
pub fn execute(cfg: &RunConfig) -> Result<i32, CliError> {
    if let Some(t) = cfg.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    if cfg.command == "accept" {
        return accept(cfg);
    }
    let out = match cfg.command.as_str() {
        "profiles" => expect_action(cfg, &[]).and_then(|_| profiles(cfg)),
        "lattice" => expect_action(cfg, &[]).and_then(|_| lattice(cfg)),
        "flow" => expect_action(cfg, &["run"]).and_then(|_| flow_run(cfg)),
        "critical" => expect_action(cfg, &["find"]).and_then(|_| critical_find(cfg)),
        "window" => expect_action(cfg, &["predict"]).and_then(|_| window_predict(cfg)),
        "exactrg" => match expect_action(cfg, &["run", "observe", "locate"])?.as_str() {
            "run" => exactrg_run(cfg),
            "observe" => exactrg_observe(cfg),
            _ => exactrg_locate(cfg),
        },
        "saw" => expect_action(cfg, &["check"]).and_then(|_| saw(cfg)),
        "wsaw" => expect_action(cfg, &["check"]).and_then(|_| wsaw(cfg)),
        other => Err(CliError::Usage(format!("unknown subcommand `{other}`"))),
    }?;
    emit(cfg.out.as_deref(), &render(cfg, &out))?;
    Ok(EXIT_OK)
}

fn profiles(cfg: &RunConfig) -> Result<Output, CliError> {
    let q = quad(cfg);
    let rows = cfg
        .s_grid()
        .into_iter()
        .map(|s| profile_row(cfg.n, s, &q))
        .collect::<hierfss::Result<Vec<_>>>()?;
    let table: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| vec![Some(r.n), Some(r.s), Some(r.f), r.sigma2, r.sigma4, r.ratio4, r.binder, r.lambda])
        .collect();
    let mut out = Output::deterministic(json!({ "rows": rows }));
    out.csv = Some(csv_table(&["n", "s", "f_n", "sigma_n2", "sigma_n4", "R4", "U_n", "lambda_n"], &table));
    Ok(out)
}

fn lattice(cfg: &RunConfig) -> Result<Output, CliError> {
    let spec = LatticeSpec::new(cfg.l, cfg.d, cfg.big_n)?;
    let chi = free_susceptibility(&spec, cfg.bc, cfg.a)?;
    let mut out = Output::deterministic(json!({
        "L": cfg.l,
        "d": cfg.d,
        "N": cfg.big_n,
        "site_count": spec.site_count(),
        "volume": spec.volume(),
        "q": spec.q(),
        "z": spec.z(),
        "fbc_mass": spec.fbc_mass(),
        "mass_floor": mass_floor(&spec),
        "bc": cfg.bc,
        "a": cfg.a,
        "free_susceptibility": chi,
    }));
    if cfg.format == crate::Format::Csv {
        out.csv = Some(resolvent(&spec, cfg.bc, cfg.a)?.to_csv());
    }
    Ok(out)
}

fn flow_params(cfg: &RunConfig) -> Result<FlowParams, CliError> {
    let mut p = FlowParams::new(cfg.d, cfg.n_components()?, cfg.l, cfg.g)?;
    if let Some(j) = cfg.jmax {
        p = p.with_jmax(j);
    }
    Ok(p)
}

fn scales(cfg: &RunConfig, p: &FlowParams) -> Result<ScaleSet, CliError> {
    Ok(scale_set(cfg.big_n, p, amplitude(p)?)?)
}

fn flow_run(cfg: &RunConfig) -> Result<Output, CliError> {
    let p = flow_params(cfg)?;
    let critical = nu_c(&p, cfg.a)?;
    let nu0 = cfg.nu.unwrap_or(critical);
    let traj = flow(nu0, cfg.a, &p, p.jmax)?;
    let trace: Vec<Value> = traj
        .iter()
        .map(|s| {
            let d = s.deriv.as_ref();
            json!({ "j": s.j, "g": s.g, "nu": s.nu, "dnu_dnu0": d.map(|d| d.nu_prime), "dnu_da": d.map(|d| d.nu_dot) })
        })
        .collect();
    let table: Vec<Vec<Option<f64>>> = traj
        .iter()
        .map(|s| {
            vec![
                Some(s.j as f64),
                Some(s.g),
                Some(s.nu),
                s.deriv.map(|d| d.nu_prime),
                s.deriv.map(|d| d.nu_dot),
            ]
        })
        .collect();
    let mut out = Output::deterministic(json!({
        "d": p.d, "n": p.n, "L": p.l, "g0": p.g0, "a": cfg.a, "nu0": nu0, "nu_c": critical,
        "trace": trace,
        "scales": scales(cfg, &p)?,
    }));
    out.csv = Some(csv_table(&["j", "g", "nu", "dnu_dnu0", "dnu_da"], &table));
    Ok(out)
}

fn critical_find(cfg: &RunConfig) -> Result<Output, CliError> {
    let p = flow_params(cfg)?;
    let cp = bleher_sinai_critical(&p, cfg.a, p.jmax)?;
    let table: Vec<Vec<Option<f64>>> = cp
        .trace
        .iter()
        .map(|t| vec![Some(t.j as f64), Some(t.g), Some(t.nu), Some(t.dnu_dnu0), Some(t.dnu_da)])
        .collect();
    let mut out = Output::deterministic(json!({
        "d": p.d, "n": p.n, "L": p.l, "g0": p.g0, "a": cfg.a,
        "nu_c": cp.nu_c,
        "width": cp.width,
        "iterations": cp.iterations,
        "resolved_scale": cp.resolved_scale,
        "trace": cp.trace,
        "effective": {
            "N": cfg.big_n,
            "periodic": effective_critical_point(BoundaryCondition::Periodic, cfg.big_n, &p)?,
            "free": effective_critical_point(BoundaryCondition::Free, cfg.big_n, &p)?,
            "fbc_shift": fbc_critical_shift(cfg.big_n, &p)?,
        },
        "scales": scales(cfg, &p)?,
    }));
    out.csv = Some(csv_table(&["j", "g", "nu", "dnu_dnu0", "dnu_da"], &table));
    Ok(out)
}

fn window_predict(cfg: &RunConfig) -> Result<Output, CliError> {
    let p = flow_params(cfg)?;
    let sc = scales(cfg, &p)?;
    let q = quad(cfg);
    let mut rows = Vec::new();
    for s in cfg.s_grid() {
        let a = renormalized_mass(s, cfg.big_n, cfg.bc, Window::W, &p, &sc)?;
        let chi = predicted_susceptibility(s, cfg.big_n, &p, &sc, &q)?;
        rows.push([s, a, chi]);
    }
    let table: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    let mut out = Output::deterministic(json!({
        "d": p.d, "n": p.n, "L": p.l, "g0": p.g0, "N": cfg.big_n, "bc": cfg.bc,
        "nu_c": effective_critical_point(BoundaryCondition::Periodic, cfg.big_n, &p)?,
        "effective_critical_point": effective_critical_point(cfg.bc, cfg.big_n, &p)?,
        "rows": rows.iter().map(|r| json!({ "s": r[0], "a_star": r[1], "chi": r[2] })).collect::<Vec<_>>(),
        "scales": sc,
    }));
    out.csv = Some(csv_table(&["s", "a_star", "chi"], &table));
    Ok(out)
}

fn replicate_seeds(cfg: &RunConfig) -> Result<Vec<u64>, CliError> {
    let seed = cfg.require_seed()?;
    if cfg.replicates < 2 {
        return Err(CliError::Usage(
            "--replicates must be at least 2 so every estimate carries a standard error".into(),
        ));
    }
    Ok((0..cfg.replicates as u64)
        .map(|r| seed.wrapping_add(r.wrapping_mul(SEED_STRIDE)))
        .collect())
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn observables_json(obs: &[ObservableSet]) -> (Value, Value) {
    let (chi, chi_se) = mean_stderr(&obs.iter().map(|o| o.susceptibility).collect::<Vec<_>>());
    let (kurt, kurt_se) = mean_stderr(&obs.iter().map(|o| o.kurtosis).collect::<Vec<_>>());
    let mut moments = Vec::new();
    let mut moments_se = Vec::new();
    for (i, (p, _)) in obs[0].moments.iter().enumerate() {
        let (m, se) = mean_stderr(&obs.iter().map(|o| o.moments[i].1).collect::<Vec<_>>());
        moments.push(json!({ "p": p, "value": m }));
        moments_se.push(json!({ "p": p, "value": se }));
    }
    (
        json!({ "bc": obs[0].bc, "a": obs[0].a, "kappa": obs[0].kappa, "volume": obs[0].volume, "susceptibility": chi, "kurtosis": kurt, "moments": moments }),
        json!({ "susceptibility": chi_se, "kurtosis": kurt_se, "moments": moments_se }),
    )
}

fn request(cfg: &RunConfig) -> ObservableRequest {
    ObservableRequest {
        moments: cfg.moments.clone(),
        laplace: Vec::new(),
    }
}

fn exactrg_run(cfg: &RunConfig) -> Result<Output, CliError> {
    let seeds = replicate_seeds(cfg)?;
    let nu = cfg.nu.ok_or_else(|| CliError::Usage("`exactrg run` needs --nu".into()))?;
    let spec = LatticeSpec::new(cfg.l, cfg.d, cfg.big_n)?;
    let n = cfg.n_components()?;
    let q = quad(cfg);
    let mut obs = Vec::new();
    let mut scales_json = Vec::new();
    for (r, &seed) in seeds.iter().enumerate() {
        let ws = run_pipeline(&spec, n, cfg.g, nu, cfg.a, &MCConfig::new(cfg.samples, seed))?;
        if r == 0 {
            for w in &ws {
                if let Some(dir) = &cfg.checkpoint {
                    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))?;
                    save_checkpoint(dir, w, &[seed])?;
                }
                let max_se = w.stderr.iter().copied().fold(0.0, f64::max);
                scales_json.push(json!({ "j": w.j, "range": w.range(), "log_offset": w.log_offset, "min_ess": w.min_ess, "max_stderr": max_se }));
            }
        }
        obs.push(zero_mode_observables(
            ws.last().expect("pipeline output"),
            cfg.bc,
            cfg.a,
            &spec,
            &request(cfg),
            &q,
        )?);
    }
    let (o, se) = observables_json(&obs);
    Ok(Output {
        outputs: json!({ "scales": scales_json, "observables": o }),
        stderr: se,
        seed_lineage: seeds,
        csv: None,
    })
}

fn exactrg_observe(cfg: &RunConfig) -> Result<Output, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("`exactrg observe` needs --checkpoint <file>".into()))?;
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    let (w, header) = read_checkpoint(BufReader::new(file))?;
    let spec = LatticeSpec::new(cfg.l, cfg.d, w.j)?;
    let o = zero_mode_observables(&w, cfg.bc, cfg.a, &spec, &request(cfg), &quad(cfg))?;
    let max_se = w.stderr.iter().copied().fold(0.0, f64::max);
    Ok(Output {
        outputs: json!({ "j": w.j, "observables": o }),
        stderr: json!({ "potential_max": max_se }),
        seed_lineage: header.seed_lineage,
        csv: None,
    })
}

fn exactrg_locate(cfg: &RunConfig) -> Result<Output, CliError> {
    let seeds = replicate_seeds(cfg)?;
    let spec = LatticeSpec::new(cfg.l, cfg.d, cfg.big_n)?;
    let n = cfg.n_components()?;
    let scan = ScanConfig {
        nu_lo: cfg.nu_lo,
        nu_hi: cfg.nu_hi,
        step: cfg.step,
        tol: cfg.tol.unwrap_or(1e-8),
        max_iter: 60,
    };
    let q = QuadratureConfig::default();
    let estimates = seeds
        .iter()
        .map(|&seed| locate_effective_critical(&spec, cfg.bc, n, cfg.g, &MCConfig::new(cfg.samples, seed), &scan, &q))
        .collect::<hierfss::Result<Vec<_>>>()?;
    let (nu, nu_se) = mean_stderr(&estimates.iter().map(|e| e.nu).collect::<Vec<_>>());
    Ok(Output {
        outputs: json!({
            "bc": cfg.bc,
            "a": estimates[0].a,
            "nu": nu,
            "nu_physical": nu + estimates[0].a,
            "target": estimates[0].target,
            "replicates": estimates,
        }),
        stderr: json!({ "nu": nu_se, "nu_physical": nu_se }),
        seed_lineage: seeds,
        csv: None,
    })
}

fn saw(cfg: &RunConfig) -> Result<Output, CliError> {
    let big_n = cfg.big_n;
    if let Some(z) = cfg.z {
        return Ok(Output::deterministic(json!({ "N": big_n, "z": z, "chi": saw_chi_exact(big_n, z)? })));
    }
    let ratio = saw_window_ratio(big_n, cfg.s)?;
    let nf = big_n as f64;
    let z = (1.0 - cfg.s / (2.0 * nf).sqrt()) / nf;
    let prediction = (2.0 * nf).sqrt() * f0_closed_form(cfg.s);
    Ok(Output::deterministic(json!({
        "N": big_n,
        "s": cfg.s,
        "ratio": ratio,
        "components": { "z": z, "chi": saw_chi_exact(big_n, z)?, "f0": f0_closed_form(cfg.s), "prediction": prediction },
    })))
}

fn wsaw(cfg: &RunConfig) -> Result<Output, CliError> {
    let w = wsaw_window_ratio(cfg.big_n, cfg.s, cfg.g, &quad(cfg))?;
    Ok(Output::deterministic(
        json!({ "N": cfg.big_n, "s": cfg.s, "ratio": w.ratio, "components": w }),
    ))
}

fn accept(cfg: &RunConfig) -> Result<i32, CliError> {
    let suite: Suite = cfg.suite.parse().map_err(CliError::Usage)?;
    let opts = AcceptOptions {
        seed: cfg.seed.unwrap_or(AcceptOptions::default().seed),
        quick: cfg.quick,
    };
    let verdicts = run_suite(suite, &opts, |v| println!("{}", v.line()));
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed}/{} criteria passed", verdicts.len());
    if cfg.out.is_some() {
        let out = Output {
            outputs: json!({ "suite": suite, "quick": opts.quick, "verdicts": verdicts }),
            stderr: Value::Null,
            seed_lineage: vec![opts.seed],
            csv: Some(csv_verdicts(&verdicts)),
        };
        emit(cfg.out.as_deref(), &render(cfg, &out))?;
    }
    Ok(if passed == verdicts.len() { EXIT_OK } else { EXIT_FAIL })
}

fn csv_verdicts(vs: &[crate::accept::Verdict]) -> String {
    let mut s = String::from("id,name,measured,target,seconds,budget_seconds,pass\n");
    for v in vs {
        s.push_str(&format!(
            "{},\"{}\",\"{}\",\"{}\",{},{},{}\n",
            v.id,
            v.name,
            v.measured.replace('"', "'"),
            v.target.replace('"', "'"),
            hierfss::io::fmt17(v.seconds),
            hierfss::io::fmt17(v.budget_seconds),
            v.pass
        ));
    }
    s
}
