//! Pipeline subcommands. Every command reads its inputs from disk and
//! writes plain CSV (plus SVG charts) under the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use epfens::data::{align, load_expert_panel, load_forecast_series, load_prices, prob, save_forecast_series};
use epfens::data::{format_date, ExpertPanel, ForecastSeries, PriceSeries, N_QUANTILES};
use epfens::learner::{run_online, write_lambda_history, write_weight_history};
use epfens::market::{crystal_ball, naive_fixed, run_strategy, worst_case, write_ledger_csv, RiskConfig, TradeLedger};
use epfens::metrics::{crps_panel, dm_pvalue_matrix, mae_median, pinball_profile, rmse_mean, LossPanel};
use epfens::qens_combine;
use rayon::prelude::*;

use crate::config::{standard_experts, Averaging, EnsembleSpec, RunConfig};
use crate::error::CliError;
use crate::svg::{line_chart, Series};
use crate::synthetic::write_synthetic_dataset;

pub fn combined_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("combined").join(format!("{name}.csv"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io)?))
}

fn write_with(path: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> Result<(), CliError> {
    f(create(path)?).map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    write_with(path, |file| {
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut file = create(path)?;
    file.write_all(text.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Latest first date and earliest last date over all inputs, clipped to the
/// configured period.
fn common_period<'a>(
    cfg: &RunConfig,
    dates: impl IntoIterator<Item = &'a [NaiveDate]>,
) -> Result<(NaiveDate, NaiveDate), CliError> {
    let mut first = cfg.start.unwrap_or(NaiveDate::MIN);
    let mut last = cfg.end.unwrap_or(NaiveDate::MAX);
    for d in dates {
        let (Some(a), Some(b)) = (d.first(), d.last()) else {
            return Err(epfens::DataError::EmptyIntersection.into());
        };
        first = first.max(*a);
        last = last.min(*b);
    }
    if first > last {
        return Err(epfens::DataError::EmptyIntersection.into());
    }
    Ok((first, last))
}

fn load_panel(cfg: &RunConfig) -> Result<(ExpertPanel, PriceSeries), CliError> {
    let names = cfg.expert_names();
    let paths: Vec<&PathBuf> = names.iter().map(|n| &cfg.experts[n]).collect();
    let panel = load_expert_panel(&paths, &names)?;
    let prices = load_prices(&cfg.prices)?;
    let aligned = align(&panel, &prices)?;
    if aligned.dropped_panel_days + aligned.dropped_price_days > 0 {
        log::info!(
            "aligned inputs: dropped {} forecast days and {} price days",
            aligned.dropped_panel_days,
            aligned.dropped_price_days
        );
    }
    let (first, last) = common_period(cfg, [aligned.prices.dates()])?;
    Ok((
        aligned.panel.restrict(first, last)?,
        aligned.prices.restrict(first, last)?,
    ))
}

fn combine_one(
    cfg: &RunConfig,
    spec: &EnsembleSpec,
    panel: &ExpertPanel,
    prices: &PriceSeries,
) -> Result<PathBuf, CliError> {
    let sub = panel.select(&spec.experts)?;
    let combined = match spec.averaging {
        Averaging::QEns => qens_combine(&sub),
        Averaging::Crps => {
            let run = run_online(&sub, prices, &cfg.learner)?;
            if run.smoothing_fallbacks > 0 {
                log::warn!(
                    "{}: {} weight rows fell back to uniform",
                    spec.name,
                    run.smoothing_fallbacks
                );
            }
            let dir = cfg.out_dir.join("learner");
            write_with(&dir.join(format!("{}_lambda.csv", spec.name)), |f| {
                write_lambda_history(f, &run.lambdas)
            })?;
            if cfg.write_weight_history {
                write_with(&dir.join(format!("{}_weights.csv", spec.name)), |f| {
                    write_weight_history(f, &run.weights)
                })?;
            }
            run.combined
        }
    };
    let path = combined_path(cfg, &spec.name);
    save_forecast_series(&path, &combined)?;
    log::info!("{}: wrote {}", spec.name, path.display());
    Ok(path)
}

/// Builds every configured ensemble; returns the combined panel paths.
pub fn combine(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    if cfg.ensembles.is_empty() {
        log::warn!("no ensembles configured; nothing to combine");
        return Ok(Vec::new());
    }
    let (panel, prices) = load_panel(cfg)?;
    cfg.ensembles
        .par_iter()
        .map(|spec| combine_one(cfg, spec, &panel, &prices))
        .collect()
}

fn load_combined(cfg: &RunConfig, name: &str) -> Result<ForecastSeries, CliError> {
    let path = combined_path(cfg, name);
    if !path.is_file() {
        return Err(CliError::MissingPanel {
            name: name.to_string(),
            path,
        });
    }
    Ok(load_forecast_series(&path)?.0)
}

/// Named forecast series and prices restricted to their common dates.
struct Models {
    names: Vec<String>,
    series: Vec<ForecastSeries>,
    prices: PriceSeries,
}

fn load_models(cfg: &RunConfig, with_experts: bool) -> Result<Models, CliError> {
    let mut names: Vec<String> = cfg.ensembles.iter().map(|e| e.name.clone()).collect();
    let mut series = names
        .par_iter()
        .map(|n| load_combined(cfg, n))
        .collect::<Result<Vec<_>, _>>()?;
    if with_experts {
        for name in cfg.expert_names() {
            series.push(load_forecast_series(&cfg.experts[&name])?.0);
            names.push(name);
        }
    }
    let prices = load_prices(&cfg.prices)?;
    let (first, last) = common_period(cfg, series.iter().map(|s| s.dates()).chain([prices.dates()]))?;
    let series = series
        .iter()
        .map(|s| s.restrict(first, last))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Models {
        names,
        series,
        prices: prices.restrict(first, last)?,
    })
}

struct Scores {
    name: String,
    crps: LossPanel,
    mean_crps: f64,
    mae: f64,
    rmse: f64,
    pinball: [f64; N_QUANTILES],
}

/// Scores sorted ascending by CRPS, ties by name.
fn score(models: &Models) -> Result<Vec<Scores>, CliError> {
    let mut scores = models
        .names
        .par_iter()
        .zip(&models.series)
        .map(|(name, s)| {
            let crps = crps_panel(s, &models.prices)?;
            Ok(Scores {
                name: name.clone(),
                mean_crps: crps.mean(),
                crps,
                mae: mae_median(s, &models.prices)?,
                rmse: rmse_mean(s, &models.prices)?,
                pinball: pinball_profile(s, &models.prices)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    scores.sort_by(|a, b| a.mean_crps.total_cmp(&b.mean_crps).then_with(|| a.name.cmp(&b.name)));
    Ok(scores)
}

fn write_dm_matrix(path: &Path, scores: &[Scores]) -> Result<(), CliError> {
    let panels: Vec<&LossPanel> = scores.iter().map(|s| &s.crps).collect();
    let matrix = dm_pvalue_matrix(&panels);
    let mut header = vec!["model".to_string()];
    header.extend(scores.iter().map(|s| s.name.clone()));
    let rows: Vec<Vec<String>> = scores
        .iter()
        .zip(&matrix)
        .enumerate()
        .map(|(r, (s, cells))| {
            let mut row = vec![s.name.clone()];
            row.extend(cells.iter().enumerate().map(|(c, v)| match v {
                Some(p) => p.to_string(),
                None if c == r => String::new(),
                None => "incomparable".to_string(),
            }));
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Writes `metrics.csv`, `pinball_relative.csv`, `dm_matrix.csv` and
/// `pinball_relative.svg` under `evaluation/`.
pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.ensembles.is_empty() {
        log::warn!("no ensembles configured; nothing to evaluate");
        return Ok(());
    }
    let models = load_models(cfg, true)?;
    let scores = score(&models)?;
    let dir = cfg.out_dir.join("evaluation");

    let header: Vec<String> = ["model", "crps", "mae", "rmse"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|s| {
            vec![
                s.name.clone(),
                s.mean_crps.to_string(),
                s.mae.to_string(),
                s.rmse.to_string(),
            ]
        })
        .collect();
    write_table(&dir.join("metrics.csv"), &header, &rows)?;

    let reference = match &cfg.reference {
        Some(r) => scores.iter().find(|s| &s.name == r).expect("validated reference"),
        None => &scores[0],
    };
    let relative: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| (0..N_QUANTILES).map(|i| s.pinball[i] / reference.pinball[i]).collect())
        .collect();
    let mut header = vec!["quantile".to_string()];
    header.extend(scores.iter().map(|s| s.name.clone()));
    let rows: Vec<Vec<String>> = (0..N_QUANTILES)
        .map(|i| {
            let mut row = vec![format!("{:.2}", prob(i))];
            row.extend(relative.iter().map(|r| r[i].to_string()));
            row
        })
        .collect();
    write_table(&dir.join("pinball_relative.csv"), &header, &rows)?;
    let series: Vec<Series> = scores
        .iter()
        .zip(&relative)
        .map(|(s, r)| Series {
            name: &s.name,
            values: r,
        })
        .collect();
    let title = format!("Pinball loss relative to {}", reference.name);
    write_text(
        &dir.join("pinball_relative.svg"),
        &line_chart(
            &title,
            "quantile",
            "relative pinball loss",
            (prob(0), prob(N_QUANTILES - 1)),
            &series,
        ),
    )?;

    write_dm_matrix(&dir.join("dm_matrix.csv"), &scores)
}

/// Writes only `evaluation/dm_matrix.csv`.
pub fn dm_matrix(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.ensembles.is_empty() {
        log::warn!("no ensembles configured; nothing to compare");
        return Ok(());
    }
    let models = load_models(cfg, true)?;
    let scores = score(&models)?;
    write_dm_matrix(&cfg.out_dir.join("evaluation").join("dm_matrix.csv"), &scores)
}

fn alpha_label(alpha: f64) -> String {
    alpha.to_string()
}

/// Writes the profit tables, benchmarks, cumulative profit series and
/// per-day ledgers under `trading/`.
pub fn trade(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.ensembles.is_empty() {
        log::warn!("no ensembles configured; nothing to trade");
        return Ok(());
    }
    let models = load_models(cfg, false)?;
    let risks = cfg
        .alpha_grid
        .iter()
        .map(|&a| Ok(RiskConfig::new(a)?.with_check(cfg.profit_check)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let jobs: Vec<(usize, usize)> = (0..models.names.len())
        .flat_map(|e| (0..risks.len()).map(move |a| (e, a)))
        .collect();
    let ledgers = jobs
        .par_iter()
        .map(|&(e, a)| run_strategy(&models.series[e], &models.prices, &risks[a]))
        .collect::<Result<Vec<TradeLedger>, _>>()?;
    let ledger = |e: usize, a: usize| &ledgers[e * risks.len() + a];
    let dir = cfg.out_dir.join("trading");

    let mut header = vec!["ensemble".to_string()];
    header.extend(cfg.alpha_grid.iter().map(|&a| alpha_label(a)));
    let table = |cell: &dyn Fn(&TradeLedger) -> String| -> Vec<Vec<String>> {
        models
            .names
            .iter()
            .enumerate()
            .map(|(e, name)| {
                let mut row = vec![name.clone()];
                row.extend((0..risks.len()).map(|a| cell(ledger(e, a))));
                row
            })
            .collect()
    };
    write_table(
        &dir.join("profit_total.csv"),
        &header,
        &table(&|l| l.total_profit.to_string()),
    )?;
    write_table(
        &dir.join("profit_per_trade.csv"),
        &header,
        &table(&|l| l.profit_per_trade().map(|v| v.to_string()).unwrap_or_default()),
    )?;

    let (buy, sell) = cfg.naive_hours;
    let benchmarks = vec![
        vec!["crystal_ball".to_string(), crystal_ball(&models.prices).to_string()],
        vec!["worst_case".to_string(), worst_case(&models.prices).to_string()],
        vec![
            format!("naive_{buy}_{sell}"),
            naive_fixed(&models.prices, buy, sell)?.to_string(),
        ],
    ];
    write_table(
        &dir.join("benchmarks.csv"),
        &["benchmark".into(), "profit".into()],
        &benchmarks,
    )?;

    let days = models.prices.dates();
    for (a, &alpha) in cfg.alpha_grid.iter().enumerate() {
        let label = alpha_label(alpha);
        let cumulative: Vec<Vec<f64>> = (0..models.names.len())
            .map(|e| ledger(e, a).cumulative_profit())
            .collect();
        let mut header = vec!["date".to_string()];
        header.extend(models.names.iter().cloned());
        let rows: Vec<Vec<String>> = days
            .iter()
            .enumerate()
            .map(|(d, date)| {
                let mut row = vec![format_date(*date)];
                row.extend(cumulative.iter().map(|c| c[d].to_string()));
                row
            })
            .collect();
        write_table(&dir.join(format!("cumulative_profit_{label}.csv")), &header, &rows)?;
        let series: Vec<Series> = models
            .names
            .iter()
            .zip(&cumulative)
            .map(|(name, c)| Series { name, values: c })
            .collect();
        write_text(
            &dir.join(format!("cumulative_profit_{label}.svg")),
            &line_chart(
                &format!("Cumulative profit, alpha = {label}"),
                "day",
                "EUR",
                (1.0, days.len() as f64),
                &series,
            ),
        )?;
        for (e, name) in models.names.iter().enumerate() {
            let path = dir.join("ledgers").join(format!("{name}_alpha_{label}.csv"));
            write_with(&path, |f| write_ledger_csv(f, ledger(e, a)))?;
        }
    }
    Ok(())
}

/// `combine`, `evaluate` and `trade` in sequence.
pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    combine(cfg)?;
    evaluate(cfg)?;
    trade(cfg)
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    /// Generate a synthetic dataset instead of checking the real one.
    pub synthetic: bool,
    pub dest: Option<PathBuf>,
    pub days: usize,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            synthetic: false,
            dest: None,
            days: 554,
        }
    }
}

const DATASET_LAYOUT: &str = "\
Expected dataset layout (one directory):
  prices.csv       header `date,hour,price`, hours 1..24
  <EXPERT>.csv     header `date,hour,q01,...,q99`, one file per expert
Standard experts: DDNN_N_1..4, DDNN_JSU_1..4, LEAR_QRA, LEAR_QRM, DNN_QRA, DNN_QRM.
Download the public companion dataset of day-ahead prices and the twelve
expert forecast sets, convert it to this layout and point `data_dir` at it.";

fn synthetic_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 6, 27).expect("valid date")
}

/// Checks the dataset layout, or writes a synthetic dataset. Returns a
/// human-readable summary.
pub fn fetch_data(cfg: &RunConfig, opts: &FetchOptions) -> Result<String, CliError> {
    if opts.synthetic {
        let dest = opts.dest.clone().unwrap_or_else(|| cfg.out_dir.join("synthetic-data"));
        write_synthetic_dataset(&dest, cfg.seed, synthetic_start(), opts.days)?;
        return Ok(format!(
            "wrote synthetic dataset ({} days, seed {}) to {}",
            opts.days,
            cfg.seed,
            dest.display()
        ));
    }
    let dir = match (&opts.dest, &cfg.data_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => d.clone(),
        (None, None) => cfg.prices.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut files: Vec<(String, PathBuf)> = vec![("prices".into(), cfg.prices.clone())];
    if opts.dest.is_some() {
        files[0].1 = dir.join("prices.csv");
    }
    let mut experts: Vec<String> = standard_experts().into_iter().map(String::from).collect();
    experts.extend(
        cfg.expert_names()
            .into_iter()
            .filter(|n| !experts.contains(n))
            .collect::<Vec<_>>(),
    );
    for name in experts {
        let path = match cfg.experts.get(&name) {
            Some(p) if opts.dest.is_none() => p.clone(),
            _ => dir.join(format!("{name}.csv")),
        };
        files.push((name, path));
    }
    let mut lines = vec![DATASET_LAYOUT.to_string(), String::new()];
    let mut missing = Vec::new();
    for (name, path) in &files {
        if !path.is_file() {
            lines.push(format!("missing  {name}: {}", path.display()));
            missing.push(name.clone());
            continue;
        }
        let dates = if name == "prices" {
            load_prices(path)?.dates().to_vec()
        } else {
            load_forecast_series(path)?.0.dates().to_vec()
        };
        let range = match (dates.first(), dates.last()) {
            (Some(a), Some(b)) => format!("{a}..{b}"),
            _ => "empty".into(),
        };
        lines.push(format!("ok       {name}: {range} ({} days)", dates.len()));
    }
    let summary = lines.join("\n");
    if missing.is_empty() {
        Ok(summary)
    } else {
        eprintln!("{summary}");
        Err(CliError::MissingData {
            dir,
            missing: missing.join(", "),
        })
    }
}
