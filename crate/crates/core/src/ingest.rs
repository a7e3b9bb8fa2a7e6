//! Carbon-intensity traces, seeded generators and pre-generated scenarios.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    intensity_from_trace_units, validate_locations, Location, LocationConfig, MlTask,
    PriceDistribution, PriceModel, SimConfig, SlotObservation, TaskConfig, TaskId, SLOT_MINUTES,
};

pub const TRACE_HEADER: [&str; 3] = ["timestamp", "region_id", "intensity_g_per_kwh"];

/// Validated trace: one intensity series (kg/J) per region on a strict
/// 30-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub timestamps: Vec<DateTime<Utc>>,
    /// Region ids in order of first appearance.
    pub regions: Vec<String>,
    /// `intensity[region][slot]` in kg/J.
    pub intensity: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn slots(&self) -> usize {
        self.timestamps.len()
    }

    pub fn region_mean(&self, r: usize) -> f64 {
        let s = &self.intensity[r];
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Region index backing each of `locations` locations: the cloud gets
    /// the region with the highest mean intensity, edges cycle through the
    /// remaining regions in file order.
    pub fn map_regions(&self, locations: usize) -> Vec<usize> {
        let cloud = (0..self.regions.len())
            .fold(0, |best, r| if self.region_mean(r) > self.region_mean(best) { r } else { best });
        let rest: Vec<usize> = (0..self.regions.len()).filter(|&r| r != cloud).collect();
        let mut out = vec![cloud];
        for k in 0..locations.saturating_sub(1) {
            out.push(if rest.is_empty() { cloud } else { rest[k % rest.len()] });
        }
        out
    }

    /// Intensity at `slot`, wrapping past the end of the trace.
    pub fn intensity_at(&self, region: usize, slot: usize) -> f64 {
        self.intensity[region][slot % self.slots()]
    }
}

fn line_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("line {line}: {msg}"))
}

/// Parses a trace CSV from any reader. Rows must be grouped by timestamp in
/// increasing order, every timestamp must carry every region exactly once,
/// and consecutive timestamps must be exactly one slot apart.
pub fn parse_trace<R: Read>(reader: R) -> Result<TraceTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(line_err(1, format!("expected header {}", TRACE_HEADER.join(","))));
    }

    let step = Duration::minutes(SLOT_MINUTES);
    let mut timestamps: Vec<DateTime<Utc>> = Vec::new();
    let mut regions: Vec<String> = Vec::new();
    let mut region_index: HashMap<String, usize> = HashMap::new();
    let mut intensity: Vec<Vec<f64>> = Vec::new();
    // Which regions have been seen at the current timestamp.
    let mut seen: Vec<bool> = Vec::new();
    let mut first_block = true;

    let check_complete = |seen: &[bool], regions: &[String], line: u64, ts: &DateTime<Utc>| -> Result<()> {
        if let Some(r) = seen.iter().position(|s| !s) {
            return Err(line_err(line, format!("timestamp {} is missing region {}", ts.to_rfc3339(), regions[r])));
        }
        Ok(())
    };

    let mut last_line = 1;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        last_line = line;
        if rec.len() != 3 {
            return Err(line_err(line, format!("expected 3 fields, found {}", rec.len())));
        }
        let ts = DateTime::parse_from_rfc3339(&rec[0])
            .map_err(|e| line_err(line, format!("bad timestamp {:?}: {e}", &rec[0])))?
            .with_timezone(&Utc);
        let region = rec[1].to_string();
        if region.is_empty() {
            return Err(line_err(line, "empty region id"));
        }
        let g: f64 = rec[2]
            .parse()
            .map_err(|_| line_err(line, format!("bad intensity {:?}", &rec[2])))?;
        if !(g >= 0.0 && g.is_finite()) {
            return Err(line_err(line, format!("intensity {g} must be non-negative")));
        }
        let kg = intensity_from_trace_units(g)?;

        match timestamps.last() {
            None => timestamps.push(ts),
            Some(&prev) if ts == prev => {}
            Some(&prev) if ts < prev => {
                return Err(line_err(line, format!("timestamp {} goes backwards", ts.to_rfc3339())));
            }
            Some(&prev) => {
                if ts - prev != step {
                    return Err(line_err(
                        line,
                        format!("gap: {} follows {}, expected {SLOT_MINUTES}-minute cadence", ts.to_rfc3339(), prev.to_rfc3339()),
                    ));
                }
                check_complete(&seen, &regions, line, &prev)?;
                first_block = false;
                timestamps.push(ts);
                seen.iter_mut().for_each(|s| *s = false);
            }
        }

        let r = match region_index.get(&region) {
            Some(&r) => r,
            None if first_block => {
                let r = regions.len();
                region_index.insert(region.clone(), r);
                regions.push(region.clone());
                intensity.push(Vec::new());
                seen.push(false);
                r
            }
            None => return Err(line_err(line, format!("region {region} absent from the first timestamp"))),
        };
        if seen[r] {
            return Err(line_err(line, format!("duplicate row for region {region}")));
        }
        seen[r] = true;
        intensity[r].push(kg);
    }

    let Some(last) = timestamps.last() else {
        return Err(line_err(last_line, "trace has no data rows"));
    };
    check_complete(&seen, &regions, last_line, last)?;
    Ok(TraceTable { timestamps, regions, intensity })
}

pub fn load_trace(path: &Path) -> Result<TraceTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Named sub-streams of a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Tasks,
    Prices,
    Locations,
    Rounding,
}

impl Stream {
    fn name(self) -> &'static str {
        match self {
            Stream::Tasks => "tasks",
            Stream::Prices => "prices",
            Stream::Locations => "locations",
            Stream::Rounding => "rounding",
        }
    }
}

pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.name().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

pub fn stream_rng(root: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub future: Vec<f64>,
    pub spot: Vec<f64>,
    /// Gaussian draws at or below zero that were redrawn.
    pub redraws: usize,
}

fn draw_price<R: Rng + ?Sized>(
    dist: PriceDistribution,
    mean: f64,
    spread: f64,
    rng: &mut R,
    redraws: &mut usize,
) -> f64 {
    match dist {
        // Mapping one U(0,1) draw keeps streams paired when means change.
        PriceDistribution::Uniform => mean + spread * (2.0 * rng.random::<f64>() - 1.0),
        PriceDistribution::Gaussian => loop {
            let z: f64 = rng.sample(StandardNormal);
            let p = mean + spread * z;
            if p > 0.0 {
                break p;
            }
            *redraws += 1;
        },
    }
}

pub fn gen_prices<R: Rng + ?Sized>(model: &PriceModel, slots: usize, rng: &mut R) -> Result<PriceSeries> {
    model.validate()?;
    let mut s = PriceSeries {
        future: Vec::with_capacity(slots),
        spot: Vec::with_capacity(slots),
        redraws: 0,
    };
    for _ in 0..slots {
        let f = draw_price(model.distribution, model.future_mean, model.future_spread, rng, &mut s.redraws);
        let p = draw_price(model.distribution, model.spot_mean, model.spot_spread, rng, &mut s.redraws);
        s.future.push(f);
        s.spot.push(p);
    }
    Ok(s)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Per-slot task lists with sequential ids.
pub fn gen_tasks<R: Rng + ?Sized>(cfg: &TaskConfig, slots: usize, rng: &mut R) -> Result<Vec<Vec<MlTask>>> {
    cfg.validate()?;
    let mut next = 0u64;
    let mut out = Vec::with_capacity(slots);
    for _ in 0..slots {
        let n = rng.random_range(cfg.min_per_slot..=cfg.max_per_slot);
        let mut slot = Vec::with_capacity(n);
        for _ in 0..n {
            let h = uniform(rng, cfg.input_bits);
            let f = uniform(rng, cfg.workload_cycles);
            slot.push(MlTask::new(TaskId(next), h, f)?);
            next += 1;
        }
        out.push(slot);
    }
    Ok(out)
}

pub fn gen_locations<R: Rng + ?Sized>(cfg: &LocationConfig, rng: &mut R) -> Result<Vec<Location>> {
    cfg.validate()?;
    if let Some(fixed) = &cfg.fixed {
        return Ok(fixed.clone());
    }
    let mut locs = vec![Location::cloud(cfg.cloud_accuracy_loss, uniform(rng, cfg.cloud_energy_per_bit))];
    for j in 1..cfg.count {
        let a = uniform(rng, cfg.edge_accuracy_loss);
        let p = uniform(rng, cfg.edge_energy_per_bit);
        let w = uniform(rng, cfg.edge_capacity_cycles);
        locs.push(Location::edge(j, a, p, w));
    }
    validate_locations(&locs)?;
    Ok(locs)
}

/// SHA-256 over every task's slot, id, size and workload.
pub fn task_stream_hash(tasks: &[Vec<MlTask>]) -> String {
    let mut h = Sha256::new();
    for (slot, list) in tasks.iter().enumerate() {
        for t in list {
            h.update((slot as u64).to_le_bytes());
            h.update(t.id.0.to_le_bytes());
            h.update(t.input_bits.to_le_bytes());
            h.update(t.workload_cycles.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Every input of one run, generated up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub locations: Vec<Location>,
    pub observations: Vec<SlotObservation>,
    pub region_of_location: Vec<usize>,
    pub price_redraws: usize,
    pub task_stream_hash: String,
    pub trace_wrapped: bool,
}

impl Scenario {
    pub fn build(cfg: &SimConfig, seed: u64, trace: &TraceTable) -> Result<Self> {
        cfg.validate()?;
        let slots = cfg.total_slots();
        let locations = gen_locations(&cfg.locations, &mut stream_rng(seed, Stream::Locations))?;
        let tasks = gen_tasks(&cfg.tasks, slots, &mut stream_rng(seed, Stream::Tasks))?;
        let prices = gen_prices(&cfg.prices, slots, &mut stream_rng(seed, Stream::Prices))?;
        let region_of_location = trace.map_regions(locations.len());
        let trace_wrapped = trace.slots() < slots;
        if trace_wrapped {
            log::warn!(
                "trace has {} slots but the run needs {slots}; wrapping around",
                trace.slots()
            );
        }
        let task_stream_hash = task_stream_hash(&tasks);
        let observations = tasks
            .into_iter()
            .enumerate()
            .map(|(slot, tasks)| SlotObservation {
                slot,
                carbon_intensity: region_of_location.iter().map(|&r| trace.intensity_at(r, slot)).collect(),
                spot_price: prices.spot[slot],
                future_price: prices.future[slot],
                tasks,
            })
            .collect();
        Ok(Scenario {
            locations,
            observations,
            region_of_location,
            price_redraws: prices.redraws,
            task_stream_hash,
            trace_wrapped,
        })
    }
}
