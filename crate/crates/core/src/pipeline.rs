//! Sequence processing, single-pair registration, synthetic benchmarks and
//! metric reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::config::{CandidatePolicy, PipelineConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    extended_precision, f1_max, label_by_distance, median, percentile, pose_errors, pr_sweep,
    registration_recall, LabeledDecision, MetricsSummary, PoseError, PrPoint,
};
use crate::pose::Pose;
use crate::refinement::{refine, RegistrationReport};
use crate::retrieval::{KeyframeEntry, KeyframeIndex};
use crate::scan_io::{ClassMap, SemanticScan};
use crate::synthetic::{random_pair, SceneSpec};
use crate::verification::{verify, VerificationResult};
use crate::ScanFeatures;

/// Wall-clock milliseconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub extract: f64,
    pub retrieve: f64,
    pub verify: f64,
    pub refine: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.extract + self.retrieve + self.verify + self.refine
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Outcome of one query.
///
/// `candidate` is the accepted candidate, or the first verified candidate
/// when none was accepted, or `None` when the database had no eligible
/// entry.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopRecord {
    pub query: usize,
    pub candidate: Option<usize>,
    pub accepted: bool,
    pub graph_similarity: f64,
    pub background_similarity: f64,
    pub inliers: usize,
    pub retrieval_distance: f64,
    pub coarse: Option<Pose>,
    pub icp: Option<Pose>,
    pub refined: Option<Pose>,
    pub timings: StageTimings,
    pub reason: Option<String>,
}

pub const RECORD_HEADER: &str = "# query\tcandidate\taccepted\ts_graph\ts_bg\tinliers\tdistance\tcoarse\ticp\trefined\tt_extract\tt_retrieve\tt_verify\tt_refine\treason";

fn fmt_pose(p: &Option<Pose>) -> String {
    match p {
        None => "-".into(),
        Some(p) => p
            .to_row_major_3x4()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

fn parse_pose(field: &str) -> std::result::Result<Option<Pose>, String> {
    if field == "-" {
        return Ok(None);
    }
    let values: Vec<f64> = field
        .split(',')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| format!("bad pose value `{v}`"))
        })
        .collect::<std::result::Result<_, _>>()?;
    let row: [f64; 12] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("pose needs 12 values, got {}", v.len()))?;
    Ok(Some(Pose::from_row_major_3x4(&row)))
}

impl LoopRecord {
    fn empty(query: usize) -> Self {
        Self {
            query,
            candidate: None,
            accepted: false,
            graph_similarity: 0.0,
            background_similarity: 0.0,
            inliers: 0,
            retrieval_distance: f64::INFINITY,
            coarse: None,
            icp: None,
            refined: None,
            timings: StageTimings::default(),
            reason: None,
        }
    }

    /// One tab-separated line; floats use shortest round-trip formatting.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let cand = self.candidate.map_or("-".to_string(), |c| c.to_string());
        let t = &self.timings;
        write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.query,
            cand,
            u8::from(self.accepted),
            self.graph_similarity,
            self.background_similarity,
            self.inliers,
            self.retrieval_distance,
            fmt_pose(&self.coarse),
            fmt_pose(&self.icp),
            fmt_pose(&self.refined),
            t.extract,
            t.retrieve,
            t.verify,
            t.refine,
            self.reason
                .as_deref()
                .unwrap_or("-")
                .replace(['\t', '\n'], " "),
        )
        .unwrap();
        s
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let err = |reason: String| Error::TextRecord {
            line: line_no,
            reason,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 15 {
            return Err(err(format!("expected 15 fields, got {}", f.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        let inner = || -> std::result::Result<Self, String> {
            Ok(Self {
                query: num(f[0], "query id")?,
                candidate: if f[1] == "-" {
                    None
                } else {
                    Some(num(f[1], "candidate id")?)
                },
                accepted: match f[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(format!("bad accepted flag `{other}`")),
                },
                graph_similarity: num(f[3], "s_graph")?,
                background_similarity: num(f[4], "s_bg")?,
                inliers: num(f[5], "inlier count")?,
                retrieval_distance: num(f[6], "distance")?,
                coarse: parse_pose(f[7])?,
                icp: parse_pose(f[8])?,
                refined: parse_pose(f[9])?,
                timings: StageTimings {
                    extract: num(f[10], "time")?,
                    retrieve: num(f[11], "time")?,
                    verify: num(f[12], "time")?,
                    refine: num(f[13], "time")?,
                },
                reason: (f[14] != "-").then(|| f[14].to_string()),
            })
        };
        inner().map_err(err)
    }
}

pub fn format_records(records: &[LoopRecord]) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parses [`format_records`] output; blank and `#` lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<LoopRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| LoopRecord::parse_line(l, i + 1))
        .collect()
}

/// Verification and, when accepted, refinement of one scan pair.
#[derive(Clone, Debug)]
pub struct PairResult {
    pub verification: VerificationResult,
    pub registration: Option<RegistrationReport>,
    pub timings: StageTimings,
}

impl PairResult {
    /// Final estimate of the pose mapping the candidate frame into the
    /// query frame.
    pub fn estimate(&self) -> Option<Pose> {
        self.registration.as_ref().map(|r| r.refined)
    }

    /// Record for a pair registered outside the retrieval loop.
    pub fn to_record(&self, query: usize, candidate: usize) -> LoopRecord {
        let v = &self.verification;
        let mut r = LoopRecord::empty(query);
        r.candidate = Some(candidate);
        r.accepted = v.accepted;
        r.graph_similarity = v.graph_similarity;
        r.background_similarity = v.background_similarity;
        r.inliers = v.inlier_count();
        r.retrieval_distance = 0.0;
        r.reason = v.reason.clone();
        if r.inliers > 0 {
            r.coarse = Some(v.coarse);
        }
        if let Some(reg) = &self.registration {
            r.icp = Some(reg.icp);
            r.refined = Some(reg.refined);
            if let Some(note) = fallback_note(reg) {
                r.reason = Some(note);
            }
        }
        r.timings = self.timings;
        r
    }
}

fn fallback_note(reg: &RegistrationReport) -> Option<String> {
    if !reg.fell_back() {
        return None;
    }
    let notes: Vec<&str> = [&reg.icp_stage.note, &reg.plane_stage.note]
        .into_iter()
        .flatten()
        .map(String::as_str)
        .collect();
    Some(format!("fallback: {}", notes.join("; ")))
}

/// Registers `candidate` against already extracted `query` features.
pub fn register_features(
    query: &ScanFeatures,
    candidate: &ScanFeatures,
    classes: &ClassMap,
    config: &PipelineConfig,
) -> PairResult {
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let verification = verify(query, candidate, classes, &config.bev, &config.verification);
    timings.verify = ms_since(start);
    let registration = verification.accepted.then(|| {
        let start = Instant::now();
        let report = refine(
            query,
            candidate,
            &verification.inliers,
            &verification.coarse,
            &config.refinement,
        );
        timings.refine = ms_since(start);
        report
    });
    PairResult {
        verification,
        registration,
        timings,
    }
}

/// Full pair registration: the returned pose maps `candidate` points into
/// the `query` frame. `timings.extract` covers the query scan only.
pub fn register_pair(
    query: SemanticScan,
    candidate: SemanticScan,
    classes: &ClassMap,
    config: &PipelineConfig,
) -> Result<PairResult> {
    let start = Instant::now();
    let q = ScanFeatures::extract(query, classes, config)?;
    let extract = ms_since(start);
    let c = ScanFeatures::extract(candidate, classes, config)?;
    let mut result = register_features(&q, &c, classes, config);
    result.timings.extract = extract;
    Ok(result)
}

#[derive(Debug, Default)]
pub struct SequenceOutput {
    pub records: Vec<LoopRecord>,
    /// Scans that could not be processed, with the error text.
    pub skipped: Vec<(usize, String)>,
}

/// Online loop closing over scans in increasing id order.
///
/// Each scan queries the database before it is inserted; scans within
/// `exclusion_window` ids of the query are not eligible. Every
/// `keyframe_stride`-th processed scan is inserted. Scans that fail to load
/// or extract are logged and skipped.
pub struct SequenceProcessor<'a> {
    classes: &'a ClassMap,
    config: &'a PipelineConfig,
    index: KeyframeIndex,
    keyframes: HashMap<usize, ScanFeatures>,
    processed: usize,
    pub output: SequenceOutput,
}

impl<'a> SequenceProcessor<'a> {
    pub fn new(classes: &'a ClassMap, config: &'a PipelineConfig) -> Result<Self> {
        config.validate()?;
        let dim = crate::descriptor::descriptor_dim(classes, &config.graph, &config.bev);
        Ok(Self {
            classes,
            config,
            index: KeyframeIndex::new(dim),
            keyframes: HashMap::new(),
            processed: 0,
            output: SequenceOutput::default(),
        })
    }

    pub fn push(&mut self, id: usize, scan: Result<SemanticScan>) {
        match scan.and_then(|s| self.process(id, s)) {
            Ok(record) => self.output.records.push(record),
            Err(e) => {
                log::warn!("scan {id} skipped: {e}");
                self.output.skipped.push((id, e.to_string()));
            }
        }
    }

    fn process(&mut self, id: usize, mut scan: SemanticScan) -> Result<LoopRecord> {
        if let Some(last) = self.output.records.last().map(|r| r.query) {
            if id <= last {
                return Err(Error::NonIncreasingScanId { id, last });
            }
        }
        scan.scan_id = id;
        let cfg = self.config;
        let mut record = LoopRecord::empty(id);

        let start = Instant::now();
        let features = ScanFeatures::extract(scan, self.classes, cfg)?;
        record.timings.extract = ms_since(start);

        let start = Instant::now();
        let neighbors = self.index.query(
            &features.descriptor.values,
            id,
            cfg.retrieval.top_n,
            cfg.retrieval.exclusion_window,
        )?;
        record.timings.retrieve = ms_since(start);

        let mut chosen: Option<(usize, f64, PairResult)> = None;
        let mut first: Option<(usize, f64, PairResult)> = None;
        for n in &neighbors {
            let cand = &self.keyframes[&n.scan_id];
            let start = Instant::now();
            let verification = verify(&features, cand, self.classes, &cfg.bev, &cfg.verification);
            record.timings.verify += ms_since(start);
            let accepted = verification.accepted;
            let result = PairResult {
                verification,
                registration: None,
                timings: StageTimings::default(),
            };
            if accepted {
                let better = chosen.as_ref().is_none_or(|(_, _, c)| {
                    result.verification.graph_similarity > c.verification.graph_similarity
                });
                if better {
                    chosen = Some((n.scan_id, n.distance, result));
                }
                if cfg.retrieval.policy == CandidatePolicy::First {
                    break;
                }
            } else if first.is_none() {
                first = Some((n.scan_id, n.distance, result));
            }
        }

        if let Some((cid, dist, mut result)) = chosen.or(first) {
            if result.verification.accepted {
                let start = Instant::now();
                let cand = &self.keyframes[&cid];
                let v = &result.verification;
                result.registration = Some(refine(
                    &features,
                    cand,
                    &v.inliers,
                    &v.coarse,
                    &cfg.refinement,
                ));
                record.timings.refine = ms_since(start);
            }
            let v = &result.verification;
            record.candidate = Some(cid);
            record.accepted = v.accepted;
            record.graph_similarity = v.graph_similarity;
            record.background_similarity = v.background_similarity;
            record.inliers = v.inlier_count();
            record.retrieval_distance = dist;
            record.reason = v.reason.clone();
            if v.inlier_count() > 0 {
                record.coarse = Some(v.coarse);
            }
            if let Some(reg) = &result.registration {
                record.icp = Some(reg.icp);
                record.refined = Some(reg.refined);
                if let Some(note) = fallback_note(reg) {
                    record.reason = Some(note);
                }
            }
        }

        if self.processed.is_multiple_of(cfg.retrieval.keyframe_stride) {
            self.index.insert(KeyframeEntry {
                scan_id: id,
                descriptor: features.descriptor.values.clone(),
                pose: None,
            })?;
            self.keyframes.insert(id, features);
        }
        self.processed += 1;
        Ok(record)
    }

    pub fn finish(self) -> SequenceOutput {
        self.output
    }
}

pub fn process_sequence(
    scans: impl IntoIterator<Item = (usize, Result<SemanticScan>)>,
    classes: &ClassMap,
    config: &PipelineConfig,
) -> Result<SequenceOutput> {
    let mut proc = SequenceProcessor::new(classes, config)?;
    for (id, scan) in scans {
        proc.push(id, scan);
    }
    Ok(proc.finish())
}

/// Detection and registration metrics of `records` against world poses
/// indexed by scan id, plus the PR sweep when both classes occur.
#[derive(Clone, Debug)]
pub struct Report {
    pub summary: MetricsSummary,
    pub sweep: Option<Vec<PrPoint>>,
}

/// Detection score of a record: graph similarity when verification reached
/// RANSAC, otherwise the negated retrieval distance.
pub fn detection_score(record: &LoopRecord) -> f64 {
    if record.inliers > 0 {
        record.graph_similarity
    } else {
        -record.retrieval_distance
    }
}

pub fn report(records: &[LoopRecord], poses: &[Pose]) -> Result<Report> {
    let pose = |id: usize| {
        poses
            .get(id)
            .ok_or_else(|| Error::Metrics(format!("no ground-truth pose for scan {id}")))
    };
    let mut decisions = Vec::new();
    let mut errors: Vec<PoseError> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for r in records {
        let Some(c) = r.candidate else { continue };
        let (pq, pc) = (pose(r.query)?, pose(c)?);
        let truth = label_by_distance((pq.translation - pc.translation).norm());
        let ground_truth = pq.inverse().compose(pc);
        decisions.push(LabeledDecision {
            query_id: r.query,
            candidate_id: c,
            score: detection_score(r),
            is_true_loop: truth,
            estimated: r.refined,
            ground_truth: Some(ground_truth),
        });
        if r.accepted {
            match truth {
                Some(true) => tp += 1,
                Some(false) => fp += 1,
                None => {}
            }
            if truth == Some(true) {
                if let Some(est) = &r.refined {
                    errors.push(pose_errors(est, &ground_truth));
                }
            }
        }
    }
    let mut summary = MetricsSummary::default();
    summary.push("queries", records.len() as f64);
    summary.push("candidates", decisions.len() as f64);
    summary.push(
        "accepted",
        records.iter().filter(|r| r.accepted).count() as f64,
    );
    summary.push("true_positives", tp as f64);
    summary.push("false_positives", fp as f64);
    let sweep = match pr_sweep(&decisions) {
        Ok(sweep) => {
            summary.push("f1_max", f1_max(&sweep));
            summary.push("extended_precision", extended_precision(&sweep));
            Some(sweep)
        }
        Err(e) => {
            log::warn!("no PR curve: {e}");
            None
        }
    };
    if !errors.is_empty() {
        let rte: Vec<f64> = errors.iter().map(|e| e.translation).collect();
        let rye: Vec<f64> = errors.iter().map(|e| e.yaw_deg).collect();
        summary.push("registration_recall", registration_recall(&errors));
        summary.push("rte_median", median(&rte));
        summary.push("rye_median_deg", median(&rye));
    }
    Ok(Report { summary, sweep })
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub trials: usize,
    pub seed: u64,
    /// Largest planar offset between the two sensor positions, meters.
    pub max_offset: f64,
    /// Every `large_yaw_every`-th trial uses a relative yaw above 150°.
    pub large_yaw_every: usize,
    pub max_range: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 1,
            max_offset: 3.0,
            large_yaw_every: 3,
            max_range: 80.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchTrial {
    pub seed: u64,
    pub query_points: usize,
    pub ground_truth: Pose,
    pub accepted: bool,
    pub error: Option<PoseError>,
    pub timings: StageTimings,
    pub reason: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub trials: Vec<BenchTrial>,
    pub summary: MetricsSummary,
}

/// Relative yaw of trial `i`.
pub fn bench_yaw(options: &BenchOptions, i: usize, rng_value: f64, sign: bool) -> Option<f64> {
    if options.large_yaw_every > 0 && i.is_multiple_of(options.large_yaw_every) {
        let y = (150.0 + 30.0 * rng_value).to_radians();
        Some(if sign { y } else { -y })
    } else {
        None
    }
}

/// Registers seeded synthetic pairs and scores every trial; a rejected
/// trial counts as a registration failure.
pub fn bench(
    spec: &SceneSpec,
    options: &BenchOptions,
    classes: &ClassMap,
    config: &PipelineConfig,
) -> Result<BenchResult> {
    use rand::{Rng, SeedableRng};
    spec.validate()?;
    config.validate()?;
    let mut trials = Vec::with_capacity(options.trials);
    for i in 0..options.trials {
        let seed = options.seed.wrapping_add(i as u64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let yaw = bench_yaw(options, i, rng.random(), rng.random());
        let pair = random_pair(spec, seed, options.max_offset, yaw, options.max_range);
        let query_points = pair.scan_a.len();
        let result = register_pair(pair.scan_a, pair.scan_b, classes, config)?;
        let error = result
            .estimate()
            .map(|e| pose_errors(&e, &pair.ground_truth));
        trials.push(BenchTrial {
            seed,
            query_points,
            ground_truth: pair.ground_truth,
            accepted: result.verification.accepted,
            error,
            timings: result.timings,
            reason: result.verification.reason.clone(),
        });
    }
    let summary = bench_summary(&trials);
    Ok(BenchResult { trials, summary })
}

pub fn bench_summary(trials: &[BenchTrial]) -> MetricsSummary {
    let n = trials.len().max(1) as f64;
    let ok = trials
        .iter()
        .filter(|t| t.error.is_some_and(|e| e.is_success()))
        .count();
    let rte: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.error.map(|e| e.translation))
        .collect();
    let rye: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.error.map(|e| e.yaw_deg))
        .collect();
    let total: Vec<f64> = trials.iter().map(|t| t.timings.total()).collect();
    let mut s = MetricsSummary::default();
    s.push("trials", trials.len() as f64);
    s.push(
        "accepted",
        trials.iter().filter(|t| t.accepted).count() as f64,
    );
    s.push("registration_recall", 100.0 * ok as f64 / n);
    s.push("rte_median", median(&rte));
    s.push("rye_median_deg", median(&rye));
    s.push("time_p50_ms", percentile(&total, 0.5));
    s.push("time_p90_ms", percentile(&total, 0.9));
    for (name, f) in [
        (
            "extract",
            (|t: &StageTimings| t.extract) as fn(&StageTimings) -> f64,
        ),
        ("verify", |t| t.verify),
        ("refine", |t| t.refine),
    ] {
        let v: Vec<f64> = trials.iter().map(|t| f(&t.timings)).collect();
        s.push(format!("{name}_p50_ms"), percentile(&v, 0.5));
    }
    s
}
