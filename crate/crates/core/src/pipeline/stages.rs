use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::artifacts::{
    artifact_err, create, csv_reader, flush, io_err, map_devices, require, write_csv, DeviceStream,
    SightingsWriter,
};
use super::manifest::{FileDigest, Manifest, StageSummary};
use super::{Pipeline, PipelineError, Stage};
use crate::colocation::{sample_pairs, summarize, validate_pairs, SampleValidation};
use crate::dedup::{
    anonymity_stats, devices_with_duplicates, duplicate_rate, group_devices, merge_group,
    AnonymityGroup, DeviceFeatures, Exclusion, Grouping,
};
use crate::geohash::GeohashCell;
use crate::home::impute_home;
use crate::ingest::{
    open_input, write_row_errors, DeviceSightings, DeviceTable, RowError, SightingReader,
};
use crate::profile::{visited_cells, VisitStats};
use crate::synth::{score, GroundTruth, Population};

const SIGHTINGS: &str = "sightings.csv";
const HOMES: &str = "homes.csv";
const PROFILES: &str = "profiles.csv";
const STATS: &str = "stats.csv";
const GROUPS: &str = "groups.csv";
const DEDUP_MAP: &str = "dedup_map.csv";
const GROUP_SIZES: &str = "group_sizes.csv";
const VALIDATION: &str = "report.csv";
const TRUTH: &str = "truth.csv";

/// What a stage hands back before its outputs are digested.
struct Outcome {
    summary: StageSummary,
    outputs: Vec<&'static str>,
    inputs: Option<Vec<FileDigest>>,
}

impl Outcome {
    fn new(summary: StageSummary, outputs: Vec<&'static str>) -> Self {
        Self {
            summary,
            outputs,
            inputs: None,
        }
    }
}

pub(super) fn run(p: &Pipeline, stage: Stage) -> Result<StageSummary, PipelineError> {
    let out = match stage {
        Stage::Synth => synth(p),
        Stage::Ingest => ingest(p),
        Stage::ImputeHome => impute_homes(p),
        Stage::Profile => profile(p),
        Stage::Dedup => dedup(p),
        Stage::Validate => validate(p),
        Stage::Report => report(p),
    }?;
    finalize(p, stage, out)
}

fn finalize(p: &Pipeline, stage: Stage, out: Outcome) -> Result<StageSummary, PipelineError> {
    let mut summary = out.summary;
    summary.stage = stage.name().to_string();
    for file in out.outputs {
        let path = p.path(stage, file);
        summary
            .outputs
            .push(FileDigest::of(&path, format!("{}/{file}", stage.dir()))?);
    }
    let summary_path = p.path(stage, "summary.json");
    write_json(&summary_path, &summary)?;

    let manifest_path = p.manifest_path();
    let hash = p.config().hash();
    let mut manifest = match Manifest::read(&manifest_path)? {
        Some(m) if m.config_hash == hash => m,
        _ => Manifest {
            config_hash: hash,
            ..Default::default()
        },
    };
    if let Some(inputs) = out.inputs {
        manifest.inputs = inputs;
    }
    manifest
        .stages
        .insert(summary.stage.clone(), summary.clone());
    write_json(&manifest_path, &manifest)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| artifact_err(path, e))?;
    flush(w, path)
}

fn synth(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let cfg = p.config();
    let synth = cfg.synth.as_ref().ok_or_else(|| PipelineError::Config {
        field: "synth".into(),
        message: "the synth stage needs a [synth] section".into(),
    })?;
    let pop = Population::plan(synth, cfg.study_month, cfg.seed())?;
    let dir = p.workdir().join(Stage::Synth.dir());
    let out = pop.write_files(&dir)?;
    let devices = pop.devices.len() as u64;
    let summary = StageSummary {
        rows_out: out.rows_per_vendor.iter().sum(),
        devices_in: devices,
        devices_out: devices,
        details: json!({
            "users": pop.users.len(),
            "multi_device_users": pop.multi_device_users(),
            "rows_per_vendor": synth.vendors.iter().map(|v| v.name.clone()).zip(out.rows_per_vendor.iter().copied()).collect::<BTreeMap<_, _>>(),
        }),
        ..Default::default()
    };
    let mut outcome = Outcome::new(summary, vec![TRUTH]);
    // Vendor file names depend on the config, so digest them here.
    outcome.summary.outputs = out
        .sighting_files
        .iter()
        .map(|f| {
            let name = f.file_name().unwrap_or_default().to_string_lossy();
            FileDigest::of(f, format!("{}/{name}", Stage::Synth.dir()))
        })
        .collect::<Result<_, _>>()?;
    Ok(outcome)
}

/// Input files with the label recorded for each.
fn input_files(p: &Pipeline) -> Result<Vec<(PathBuf, String)>, PipelineError> {
    let cfg = p.config();
    if !cfg.inputs.is_empty() {
        return Ok(cfg
            .inputs
            .iter()
            .map(|i| (i.clone(), i.display().to_string()))
            .collect());
    }
    let Some(synth) = &cfg.synth else {
        return Err(PipelineError::Config {
            field: "inputs".into(),
            message: "no input files and no [synth] section".into(),
        });
    };
    let ext = if synth.gzip { "csv.gz" } else { "csv" };
    synth
        .vendors
        .iter()
        .map(|v| {
            let name = format!("vendor_{}.{ext}", v.name);
            let path = p.path(Stage::Synth, &name);
            require(&path, "synth")?;
            Ok((path, format!("{}/{name}", Stage::Synth.dir())))
        })
        .collect()
}

fn ingest(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let cfg = p.config();
    let files = input_files(p)?;
    let digests = files
        .iter()
        .map(|(path, label)| FileDigest::of(path, label.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let schema = cfg.schema();
    let parsed: Vec<Result<(DeviceTable, Vec<RowError>), PipelineError>> = files
        .par_iter()
        .map(|(path, label)| {
            let reader = SightingReader::new(open_input(path)?, label, &schema)?;
            let mut table = DeviceTable::new();
            let mut errors = Vec::new();
            for item in reader {
                match item {
                    Ok(r) => table.push(r),
                    Err(e) => {
                        table.note_error(&e);
                        errors.push(e);
                    }
                }
            }
            Ok((table, errors))
        })
        .collect();
    let mut table = DeviceTable::new();
    let mut errors = Vec::new();
    for r in parsed {
        let (t, mut e) = r?;
        table.merge(t);
        errors.append(&mut e);
    }
    let (devices, dropped, report) = table.finish(&cfg.ingest_options());

    let mut w = SightingsWriter::create(&p.path(Stage::Ingest, SIGHTINGS))?;
    for d in &devices {
        w.write_device(&d.device_id, d)?;
    }
    w.finish()?;
    drop(devices);

    let err_path = p.path(Stage::Ingest, "row_errors.tsv");
    let ew = create(&err_path)?;
    write_row_errors(ew, &errors).map_err(io_err(&err_path))?;
    write_csv(
        &p.path(Stage::Ingest, "dropped_devices.csv"),
        &["device_id", "reason", "sightings"],
        dropped.iter().map(|d| {
            [
                d.device_id.clone(),
                d.reason.code().to_string(),
                d.sightings.to_string(),
            ]
        }),
    )?;

    let summary = StageSummary {
        rows_in: report.rows_read,
        rows_out: report.rows_kept,
        devices_in: report.devices_in,
        devices_out: report.devices_out,
        devices_dropped: report.devices_dropped.clone(),
        details: serde_json::to_value(&report).expect("report serializes"),
        ..Default::default()
    };
    let mut out = Outcome::new(
        summary,
        vec![SIGHTINGS, "row_errors.tsv", "dropped_devices.csv"],
    );
    out.inputs = Some(digests);
    Ok(out)
}

fn sightings_path(p: &Pipeline) -> PathBuf {
    p.path(Stage::Ingest, SIGHTINGS)
}

fn impute_homes(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let night = p.config().night;
    let (homes, rows) = map_devices(&sightings_path(p), "ingest", |d| impute_home(d, night))?;
    let devices = homes.len() as u64;
    let found: Vec<_> = homes.into_iter().flatten().collect();
    write_csv(
        &p.path(Stage::ImputeHome, HOMES),
        &[
            "device_id",
            "home6",
            "home7",
            "days_observed",
            "candidate_count",
        ],
        found.iter().map(|h| {
            [
                h.device_id.clone(),
                h.home6.to_string(),
                h.home7.to_string(),
                h.days_observed.to_string(),
                h.candidate_count.to_string(),
            ]
        }),
    )?;
    let out = found.len() as u64;
    let mut summary = StageSummary {
        rows_in: rows,
        rows_out: out,
        devices_in: devices,
        devices_out: out,
        details: json!({ "night_start_hour": p.config().night.start_hour, "night_end_hour": p.config().night.end_hour }),
        ..Default::default()
    };
    summary
        .devices_dropped
        .insert(Exclusion::NoHome.code().to_string(), devices - out);
    Ok(Outcome::new(summary, vec![HOMES]))
}

/// Profile columns kept per device: enough for every N the run uses.
fn profile_width(p: &Pipeline) -> usize {
    p.config().top_n.max(p.config().n_sweep.max)
}

fn profile(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let k = profile_width(p);
    let n = p.config().top_n;
    let (profiles, rows) = map_devices(&sightings_path(p), "ingest", |d| {
        let v = visited_cells(&d.sightings);
        let visited = v.len();
        (
            d.device_id.clone(),
            visited,
            v.into_iter().take(k).collect::<Vec<_>>(),
        )
    })?;
    let mut header = vec!["device_id".to_string(), "visited".to_string()];
    for field in ["cell", "unique_hours", "sightings"] {
        header.extend((1..=k).map(|i| format!("{field}_{i}")));
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &p.path(Stage::Profile, PROFILES),
        &header,
        profiles.iter().map(|(id, visited, top)| {
            let col = |f: &dyn Fn(&VisitStats) -> String| -> Vec<String> {
                (0..k)
                    .map(|i| top.get(i).map(f).unwrap_or_default())
                    .collect()
            };
            let mut row = vec![id.clone(), visited.to_string()];
            row.extend(col(&|v| v.cell7.to_string()));
            row.extend(col(&|v| v.unique_hours.to_string()));
            row.extend(col(&|v| v.sightings.to_string()));
            row
        }),
    )?;
    let devices = profiles.len() as u64;
    let out = profiles.iter().filter(|(_, v, _)| *v >= n).count() as u64;
    let mut summary = StageSummary {
        rows_in: rows,
        rows_out: devices,
        devices_in: devices,
        devices_out: out,
        details: json!({ "top_n": n, "columns": k }),
        ..Default::default()
    };
    summary
        .devices_dropped
        .insert(Exclusion::FewerThanNCells.code().to_string(), devices - out);
    Ok(Outcome::new(summary, vec![PROFILES]))
}

fn load_homes(p: &Pipeline) -> Result<HashMap<String, GeohashCell>, PipelineError> {
    #[derive(Deserialize)]
    struct Row {
        device_id: String,
        #[allow(dead_code)]
        home6: GeohashCell,
        home7: GeohashCell,
    }
    let path = p.path(Stage::ImputeHome, HOMES);
    require(&path, "impute-home")?;
    let mut homes = HashMap::new();
    for row in csv_reader(&path)?.deserialize::<Row>() {
        let row = row.map_err(|e| artifact_err(&path, e))?;
        homes.insert(row.device_id, row.home7);
    }
    Ok(homes)
}

/// Home and visited cells of every ingested device, in id order.
fn load_features(p: &Pipeline) -> Result<Vec<DeviceFeatures>, PipelineError> {
    let homes = load_homes(p)?;
    let path = p.path(Stage::Profile, PROFILES);
    require(&path, "profile")?;
    let mut rdr = csv_reader(&path)?;
    let width = rdr.headers().map_err(|e| artifact_err(&path, e))?.len();
    let k = width.saturating_sub(2) / 3;
    if width != 2 + 3 * k {
        return Err(artifact_err(&path, format!("{width} columns")));
    }
    if k < profile_width(p) {
        return Err(PipelineError::Config {
            field: "n_sweep".into(),
            message: format!("profiles hold {k} cells per device; rerun the 'profile' stage"),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| artifact_err(&path, e))?;
        let bad = |what: &str| {
            artifact_err(
                &path,
                format!(
                    "line {}: bad {what}",
                    row.position().map_or(0, |p| p.line())
                ),
            )
        };
        let id = row[0].to_string();
        let mut visited = Vec::new();
        for i in 0..k {
            let cell = &row[2 + i];
            if cell.is_empty() {
                break;
            }
            visited.push(VisitStats {
                cell7: cell.parse().map_err(|_| bad("cell"))?,
                unique_hours: row[2 + k + i].parse().map_err(|_| bad("unique_hours"))?,
                sightings: row[2 + 2 * k + i].parse().map_err(|_| bad("sightings"))?,
            });
        }
        out.push(DeviceFeatures {
            home7: homes.get(&id).copied(),
            device_id: id,
            visited,
        });
    }
    out.sort_by(|a, b| a.device_id.cmp(&b.device_id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct StatsRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub groups: usize,
    pub min_k: Option<usize>,
    pub mean_k: Option<f64>,
    pub max_k: Option<usize>,
    pub keyed_devices: usize,
    pub devices_with_duplicates: usize,
    pub duplicate_rate: f64,
    pub excluded_no_home: usize,
    pub excluded_fewer_than_n_cells: usize,
}

fn stats_row(n: usize, g: &Grouping) -> StatsRow {
    let stats = anonymity_stats(&g.groups);
    let excl = g.excluded_by_reason();
    StatsRow {
        n,
        groups: g.groups.len(),
        min_k: stats.map(|s| s.min_k),
        mean_k: stats.map(|s| s.mean_k),
        max_k: stats.map(|s| s.max_k),
        keyed_devices: g.keyed_devices(),
        devices_with_duplicates: devices_with_duplicates(&g.groups),
        duplicate_rate: duplicate_rate(&g.groups),
        excluded_no_home: excl.get(&Exclusion::NoHome).copied().unwrap_or(0),
        excluded_fewer_than_n_cells: excl.get(&Exclusion::FewerThanNCells).copied().unwrap_or(0),
    }
}

fn write_serde_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| artifact_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_serde_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    csv_reader(path)?
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| artifact_err(path, e))
}

fn join_cells(cells: &[GeohashCell]) -> String {
    cells
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn dedup(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let cfg = p.config();
    let features = load_features(p)?;
    let mut stats = Vec::new();
    let mut sizes = Vec::new();
    let mut grouping = None;
    for n in cfg.n_sweep.values() {
        let g = group_devices(&features, n);
        stats.push(stats_row(n, &g));
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for grp in &g.groups {
            *hist.entry(grp.k()).or_default() += 1;
        }
        sizes.extend(
            hist.into_iter()
                .map(|(k, c)| [n.to_string(), k.to_string(), c.to_string()]),
        );
        if n == cfg.top_n {
            grouping = Some(g);
        }
    }
    let grouping = grouping.expect("sweep contains top_n");
    write_serde_csv(&p.path(Stage::Dedup, STATS), &stats)?;
    write_csv(
        &p.path(Stage::Dedup, GROUP_SIZES),
        &["N", "k", "groups"],
        sizes,
    )?;
    write_csv(
        &p.path(Stage::Dedup, DEDUP_MAP),
        &["source_device_id", "canonical_device_id"],
        grouping.dedup_map().into_iter().map(|(a, b)| [a, b]),
    )?;
    write_csv(
        &p.path(Stage::Dedup, GROUPS),
        &["canonical_id", "k", "home7", "top", "members"],
        grouping.groups.iter().map(|g| {
            [
                g.canonical_id().to_string(),
                g.k().to_string(),
                g.key.home7.to_string(),
                join_cells(&g.key.top),
                g.members.join(";"),
            ]
        }),
    )?;
    write_csv(
        &p.path(Stage::Dedup, "excluded.csv"),
        &["device_id", "reason"],
        grouping
            .excluded
            .iter()
            .map(|(id, r)| [id.clone(), r.code().to_string()]),
    )?;
    let (rows_in, rows_out) = write_merged(p, &grouping.groups)?;

    let keyed = grouping.keyed_devices() as u64;
    let groups = grouping.groups.len() as u64;
    let mut summary = StageSummary {
        rows_in,
        rows_out,
        devices_in: features.len() as u64,
        devices_out: groups,
        details: json!({ "top_n": cfg.top_n, "sweep": stats }),
        ..Default::default()
    };
    for (reason, count) in grouping.excluded_by_reason() {
        summary
            .devices_dropped
            .insert(reason.code().to_string(), count as u64);
    }
    summary
        .devices_dropped
        .insert("merged_into_canonical".to_string(), keyed - groups);
    Ok(Outcome::new(
        summary,
        vec![
            STATS,
            GROUP_SIZES,
            DEDUP_MAP,
            GROUPS,
            "excluded.csv",
            "merged_sightings.csv",
        ],
    ))
}

/// Write keyed devices with duplicate groups merged under their canonical id.
/// Returns rows read and rows written.
fn write_merged(p: &Pipeline, groups: &[AnonymityGroup]) -> Result<(u64, u64), PipelineError> {
    enum Role {
        Keep,
        Canonical(usize),
        Absorbed,
    }
    let mut role: HashMap<&str, Role> = HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_duplicate() {
            for m in &g.members {
                role.insert(m, Role::Absorbed);
            }
            role.insert(g.canonical_id(), Role::Canonical(i));
        } else {
            role.insert(g.canonical_id(), Role::Keep);
        }
    }
    let path = sightings_path(p);
    let mut members: HashMap<String, DeviceSightings> = HashMap::new();
    let mut first = DeviceStream::open(&path, "ingest")?;
    while let Some(d) = first.next()? {
        if matches!(
            role.get(d.device_id.as_str()),
            Some(Role::Canonical(_) | Role::Absorbed)
        ) {
            members.insert(d.device_id.clone(), d);
        }
    }
    let store: HashMap<&str, &DeviceSightings> =
        members.iter().map(|(k, v)| (k.as_str(), v)).collect();

    let mut w = SightingsWriter::create(&p.path(Stage::Dedup, "merged_sightings.csv"))?;
    let mut stream = DeviceStream::open(&path, "ingest")?;
    while let Some(d) = stream.next()? {
        match role.get(d.device_id.as_str()) {
            Some(Role::Keep) => w.write_device(&d.device_id, &d)?,
            Some(Role::Canonical(i)) => {
                let merged = merge_group(&groups[*i], &store).into_device();
                w.write_device(&merged.device_id, &merged)?;
            }
            Some(Role::Absorbed) | None => {}
        }
    }
    let rows_out = w.rows;
    w.finish()?;
    Ok((stream.rows, rows_out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct ValidationRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub pairs_flagged: usize,
    pub pairs_sampled: usize,
    pub pairs_with_common_hours: usize,
    pub pairs_no_common_hours: usize,
    pub mean_rate: Option<f64>,
    pub median_rate: Option<f64>,
    pub used_all_pairs: bool,
}

impl ValidationRow {
    fn new(n: usize, v: &SampleValidation) -> Self {
        Self {
            n,
            pairs_flagged: v.pairs_flagged,
            pairs_sampled: v.pairs_sampled,
            pairs_with_common_hours: v.pairs_with_common_hours,
            pairs_no_common_hours: v.pairs_sampled - v.pairs_with_common_hours,
            mean_rate: v.mean_rate,
            median_rate: v.median_rate,
            used_all_pairs: v.used_all_pairs,
        }
    }
}

fn flagged_pairs(g: &Grouping) -> Vec<(String, String)> {
    g.duplicate_groups()
        .flat_map(|grp| grp.pairs().map(|(a, b)| (a.to_string(), b.to_string())))
        .collect()
}

fn validate(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let cfg = p.config();
    require(&p.path(Stage::Dedup, STATS), "dedup")?;
    let features = load_features(p)?;
    let window = cfg.validation_window();

    let mut per_n = Vec::new();
    let mut needed: BTreeSet<String> = BTreeSet::new();
    for n in cfg.n_sweep.values() {
        let pairs = flagged_pairs(&group_devices(&features, n));
        let (chosen, used_all) = sample_pairs(&pairs, cfg.validation.sample_size, cfg.seed());
        let chosen: Vec<(String, String)> = chosen.into_iter().cloned().collect();
        for (a, b) in &chosen {
            needed.insert(a.clone());
            needed.insert(b.clone());
        }
        per_n.push((n, pairs.len(), used_all, chosen));
    }
    drop(features);

    let mut stream = DeviceStream::open(&sightings_path(p), "ingest")?;
    let mut devices = Vec::new();
    while let Some(mut d) = stream.next()? {
        if needed.contains(&d.device_id) {
            d.sightings.retain(|s| window.contains(s.at.day));
            devices.push(d);
        }
    }
    let store: HashMap<&str, &DeviceSightings> =
        devices.iter().map(|d| (d.device_id.as_str(), d)).collect();

    let mut rows = Vec::new();
    let mut top = None;
    for (n, flagged, used_all, chosen) in &per_n {
        let refs: Vec<&(String, String)> = chosen.iter().collect();
        let v = summarize(*flagged, *used_all, validate_pairs(&refs, &store, window));
        rows.push(ValidationRow::new(*n, &v));
        if *n == cfg.top_n {
            top = Some(v);
        }
    }
    let top = top.expect("sweep contains top_n");
    write_serde_csv(&p.path(Stage::Validate, VALIDATION), &rows)?;
    write_csv(
        &p.path(Stage::Validate, "pairs.csv"),
        &["id_a", "id_b", "common_hours", "colocated_hours", "rate"],
        top.pairs.iter().map(|v| {
            [
                v.id_a.clone(),
                v.id_b.clone(),
                v.common_hours.to_string(),
                v.colocated_hours.to_string(),
                v.rate()
                    .map_or("no-common-hours".to_string(), |r| r.to_string()),
            ]
        }),
    )?;
    let involved: BTreeSet<&str> = top
        .pairs
        .iter()
        .flat_map(|v| [v.id_a.as_str(), v.id_b.as_str()])
        .collect();
    let summary = StageSummary {
        rows_in: stream.rows,
        rows_out: rows.len() as u64,
        devices_in: involved.len() as u64,
        devices_out: involved.len() as u64,
        details: json!({
            "window_start": window.start.to_string(),
            "window_end_exclusive": window.end.to_string(),
            "per_n": rows,
        }),
        ..Default::default()
    };
    Ok(Outcome::new(summary, vec![VALIDATION, "pairs.csv"]))
}

/// Smallest k such that at least `q` of the groups have size <= k.
fn size_quantile(hist: &BTreeMap<usize, usize>, q: f64) -> usize {
    let total: usize = hist.values().sum();
    let mut cum = 0;
    for (k, c) in hist {
        cum += c;
        if cum as f64 >= q * total as f64 {
            return *k;
        }
    }
    hist.keys().next_back().copied().unwrap_or(0)
}

fn report(p: &Pipeline) -> Result<Outcome, PipelineError> {
    let cfg = p.config();
    let stats_path = p.path(Stage::Dedup, STATS);
    require(&stats_path, "dedup")?;
    let stats: Vec<StatsRow> = read_serde_csv(&stats_path)?;
    let validation_path = p.path(Stage::Validate, VALIDATION);
    let validation: BTreeMap<usize, ValidationRow> = if validation_path.is_file() {
        read_serde_csv::<ValidationRow>(&validation_path)?
            .into_iter()
            .map(|r| (r.n, r))
            .collect()
    } else {
        BTreeMap::new()
    };
    let opt = |v: Option<String>| v.unwrap_or_default();

    write_csv(
        &p.path(Stage::Report, "table3.csv"),
        &["N", "min", "mean", "max"],
        stats.iter().map(|s| {
            [
                s.n.to_string(),
                opt(s.min_k.map(|v| v.to_string())),
                opt(s.mean_k.map(|v| format!("{v:.2}"))),
                opt(s.max_k.map(|v| v.to_string())),
            ]
        }),
    )?;
    write_csv(
        &p.path(Stage::Report, "sweep.csv"),
        &[
            "N",
            "groups",
            "keyed_devices",
            "devices_with_duplicates",
            "duplicate_rate",
            "pairs_sampled",
            "pairs_with_common_hours",
            "mean_colocation_rate",
        ],
        stats.iter().map(|s| {
            let v = validation.get(&s.n);
            [
                s.n.to_string(),
                s.groups.to_string(),
                s.keyed_devices.to_string(),
                s.devices_with_duplicates.to_string(),
                format!("{:.6}", s.duplicate_rate),
                opt(v.map(|v| v.pairs_sampled.to_string())),
                opt(v.map(|v| v.pairs_with_common_hours.to_string())),
                opt(v.and_then(|v| v.mean_rate).map(|r| format!("{r:.6}"))),
            ]
        }),
    )?;

    let sizes_path = p.path(Stage::Dedup, GROUP_SIZES);
    let mut hists: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for row in csv_reader(&sizes_path)?.records() {
        let row = row.map_err(|e| artifact_err(&sizes_path, e))?;
        let num = |i: usize| {
            row[i]
                .parse::<usize>()
                .map_err(|e| artifact_err(&sizes_path, e))
        };
        hists.entry(num(0)?).or_default().insert(num(1)?, num(2)?);
    }
    const QUANTILES: [(&str, f64); 5] = [
        ("p50", 0.5),
        ("p80", 0.8),
        ("p90", 0.9),
        ("p95", 0.95),
        ("p99", 0.99),
    ];
    let mut header = vec!["N", "singleton_share"];
    header.extend(QUANTILES.iter().map(|(name, _)| *name));
    write_csv(
        &p.path(Stage::Report, "group_size_percentiles.csv"),
        &header,
        hists.iter().map(|(n, h)| {
            let total: usize = h.values().sum();
            let single = h.get(&1).copied().unwrap_or(0);
            let mut row = vec![
                n.to_string(),
                format!("{:.6}", single as f64 / total.max(1) as f64),
            ];
            row.extend(
                QUANTILES
                    .iter()
                    .map(|(_, q)| size_quantile(h, *q).to_string()),
            );
            row
        }),
    )?;

    let groups_path = p.path(Stage::Dedup, GROUPS);
    let mut keyed = Vec::new();
    for row in csv_reader(&groups_path)?.records() {
        let row = row.map_err(|e| artifact_err(&groups_path, e))?;
        keyed.extend(row[4].split(';').map(str::to_string));
    }
    let mut outputs = vec!["table3.csv", "sweep.csv", "group_size_percentiles.csv"];
    let truth_path = p.path(Stage::Synth, TRUTH);
    let mut details = json!({ "top_n": cfg.top_n });
    if truth_path.is_file() {
        let truth = GroundTruth::read(&truth_path)?;
        let map_path = p.path(Stage::Dedup, DEDUP_MAP);
        let map: Vec<(String, String)> = read_serde_csv(&map_path)?;
        let s = score(&map, &truth, keyed.iter().map(String::as_str))?;
        let planted = truth.duplicate_device_rate(keyed.iter().map(String::as_str));
        write_json(
            &p.path(Stage::Report, "score.json"),
            &json!({ "top_n": cfg.top_n, "planted_duplicate_rate": planted, "score": s }),
        )?;
        details["score"] = serde_json::to_value(&s).expect("score serializes");
        details["planted_duplicate_rate"] = json!(planted);
        outputs.push("score.json");
    }
    let summary = StageSummary {
        rows_in: stats.len() as u64,
        rows_out: stats.len() as u64,
        devices_in: keyed.len() as u64,
        devices_out: keyed.len() as u64,
        details,
        ..Default::default()
    };
    Ok(Outcome::new(summary, outputs))
}
