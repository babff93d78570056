//! UE mobility (2-D random walk in a disc) and the four-class downlink
//! traffic mix.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::geometry::{Disc, Point};

/// Backlog value standing in for an always-full buffer.
pub const INFINITE_BACKLOG: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrafficClass {
    FullBuffer20M,
    UdpBursty20M,
    TcpBursty750k,
    TcpBursty150k,
}

impl TrafficClass {
    /// Deterministic class assignment. With `n` UEs the four classes get
    /// `n/4` each and the remainder goes to the bursty classes, so 63 UEs
    /// split 15/16/16/16.
    pub fn for_ue(ue_id: usize) -> TrafficClass {
        match ue_id % 4 {
            0 => TrafficClass::UdpBursty20M,
            1 => TrafficClass::TcpBursty750k,
            2 => TrafficClass::TcpBursty150k,
            _ => TrafficClass::FullBuffer20M,
        }
    }

    /// Long-run average offered rate in bits/s; `None` for full buffer.
    pub fn nominal_rate(self, cfg: &ScenarioConfig) -> Option<f64> {
        match self {
            TrafficClass::FullBuffer20M => None,
            TrafficClass::UdpBursty20M => Some(cfg.udp_bursty_rate),
            TrafficClass::TcpBursty750k => Some(cfg.tcp_bursty_high_rate),
            TrafficClass::TcpBursty150k => Some(cfg.tcp_bursty_low_rate),
        }
    }

    /// TCP backlog survives periods without service; UDP backlog is dropped.
    pub fn queues_when_disconnected(self) -> bool {
        !matches!(self, TrafficClass::UdpBursty20M)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    On,
    Off,
}

/// Exponential on/off source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstProcess {
    pub state: Phase,
    /// seconds left in the current phase
    pub remaining: f64,
    pub mean_on: f64,
    pub mean_off: f64,
    /// bits/s while on
    pub rate_on: f64,
    /// fractional bits not yet emitted as whole bytes
    carry_bits: f64,
}

impl BurstProcess {
    /// Source whose long-run mean equals `mean_rate`: the on-rate is scaled
    /// by the inverse duty cycle.
    pub fn new<R: Rng + ?Sized>(mean_rate: f64, mean_on: f64, mean_off: f64, rng: &mut R) -> Self {
        let duty = mean_on / (mean_on + mean_off);
        let state = if rng.random_bool(duty) { Phase::On } else { Phase::Off };
        let mut p = BurstProcess {
            state,
            remaining: 0.0,
            mean_on,
            mean_off,
            rate_on: mean_rate / duty,
            carry_bits: 0.0,
        };
        p.remaining = p.draw_phase(rng);
        p
    }

    fn draw_phase<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mean = match self.state {
            Phase::On => self.mean_on,
            Phase::Off => self.mean_off,
        };
        // Exp can return 0.0; keep phases strictly positive.
        sample_exp(mean, rng).max(f64::MIN_POSITIVE)
    }

    /// Advances by `dt` seconds and returns the whole bytes generated.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> u64 {
        let mut left = dt;
        while left > 0.0 {
            let span = left.min(self.remaining);
            if self.state == Phase::On {
                self.carry_bits += self.rate_on * span;
            }
            self.remaining -= span;
            left -= span;
            if self.remaining <= 0.0 {
                self.state = match self.state {
                    Phase::On => Phase::Off,
                    Phase::Off => Phase::On,
                };
                self.remaining = self.draw_phase(rng);
            }
        }
        let bytes = (self.carry_bits / 8.0).floor();
        self.carry_bits -= bytes * 8.0;
        bytes as u64
    }
}

pub fn sample_exp<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

/// Per-UE traffic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrafficSource {
    FullBuffer,
    Bursty(BurstProcess),
}

impl TrafficSource {
    pub fn new<R: Rng + ?Sized>(class: TrafficClass, cfg: &ScenarioConfig, rng: &mut R) -> Self {
        match class.nominal_rate(cfg) {
            None => TrafficSource::FullBuffer,
            Some(rate) => TrafficSource::Bursty(BurstProcess::new(
                rate,
                cfg.burst_mean_on,
                cfg.burst_mean_off,
                rng,
            )),
        }
    }

    /// Bytes arriving in the next `dt` seconds; full buffer returns the
    /// [`INFINITE_BACKLOG`] sentinel.
    pub fn generate_arrivals<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> u64 {
        match self {
            TrafficSource::FullBuffer => INFINITE_BACKLOG,
            TrafficSource::Bursty(p) => {
                if dt <= 0.0 {
                    0
                } else {
                    p.advance(dt, rng)
                }
            }
        }
    }
}

/// Random-walk kinematic state of one UE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub position: Point,
    /// radians
    pub heading: f64,
    /// m/s
    pub speed: f64,
    /// seconds until the next heading redraw
    pub next_turn: f64,
    pub turn_mean: f64,
}

impl Motion {
    /// Moves for `dt` seconds, redrawing the heading at exponential epochs and
    /// reflecting specularly off the region boundary.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, region: &Disc, rng: &mut R) {
        let mut left = dt;
        while left > 0.0 {
            let span = left.min(self.next_turn);
            self.travel(self.speed * span, region);
            self.next_turn -= span;
            left -= span;
            if self.next_turn <= 0.0 {
                self.heading = rng.random_range(0.0..std::f64::consts::TAU);
                self.next_turn = sample_exp(self.turn_mean, rng).max(f64::MIN_POSITIVE);
            }
        }
    }

    fn travel(&mut self, mut dist: f64, region: &Disc) {
        // Bounded loop: each pass either finishes or hits the boundary once.
        for _ in 0..64 {
            if dist <= 0.0 {
                return;
            }
            let dir = Point::new(self.heading.cos(), self.heading.sin());
            let rel = self.position - region.center;
            // Solve |rel + t·dir| = r for t > 0.
            let b = rel.dot(dir);
            let c = rel.dot(rel) - region.radius * region.radius;
            let disc = (b * b - c).max(0.0);
            let t_exit = -b + disc.sqrt();
            if t_exit >= dist {
                self.position = self.position + dir * dist;
                return;
            }
            let t_exit = t_exit.max(0.0);
            let hit = rel + dir * t_exit;
            let normal = hit * (1.0 / hit.norm().max(f64::MIN_POSITIVE));
            let reflected = dir - normal * (2.0 * dir.dot(normal));
            self.position = region.center + hit;
            self.heading = reflected.y.atan2(reflected.x);
            dist -= t_exit;
            // Nudge inward so the next solve starts strictly inside.
            if dist > 0.0 && t_exit == 0.0 {
                let step = dist.min(1e-9);
                self.position = self.position + reflected * step;
                dist -= step;
            }
        }
        self.position = region.clamp(self.position);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn motion(speed: f64) -> Motion {
        Motion {
            position: Point::new(0.0, 0.0),
            heading: 0.0,
            speed,
            next_turn: 10.0,
            turn_mean: 1.0,
        }
    }

    #[test]
    fn displacement_is_speed_times_dt() {
        let region = Disc::new(Point::new(0.0, 0.0), 1700.0);
        let mut m = motion(2.0);
        let mut rng = stream_rng(1, Stream::Mobility);
        m.step(0.001, &region, &mut rng);
        assert!((m.position.x - 0.002).abs() < 1e-15);
        assert_eq!(m.position.y, 0.0);
    }

    #[test]
    fn zero_step_is_identity() {
        let region = Disc::new(Point::new(0.0, 0.0), 1700.0);
        let mut m = motion(3.0);
        let before = m.clone();
        let mut rng = stream_rng(1, Stream::Mobility);
        m.step(0.0, &region, &mut rng);
        assert_eq!(m, before);
    }

    #[test]
    fn reflects_at_boundary() {
        let region = Disc::new(Point::new(0.0, 0.0), 10.0);
        let mut m = Motion {
            position: Point::new(9.0, 0.0),
            ..motion(4.0)
        };
        let mut rng = stream_rng(1, Stream::Mobility);
        m.step(1.0, &region, &mut rng);
        // 1 m to the wall, 3 m back.
        assert!((m.position.x - 7.0).abs() < 1e-9, "{:?}", m.position);
        assert!(m.heading.cos() < -0.999);
    }

    #[test]
    fn ten_second_walks_stay_inside() {
        let region = Disc::new(Point::new(0.0, 0.0), 1700.0);
        for seed in 0..1000u64 {
            let mut rng = stream_rng(seed, Stream::Mobility);
            let r = 1700.0 * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let mut m = Motion {
                position: Point::new(r * a.cos(), r * a.sin()),
                heading: rng.random_range(0.0..std::f64::consts::TAU),
                // exaggerated speed to exercise reflections
                speed: 400.0,
                next_turn: 0.5,
                turn_mean: 1.0,
            };
            for _ in 0..100 {
                m.step(0.1, &region, &mut rng);
                assert!(region.contains(m.position, 1e-6), "seed {seed}: {:?}", m.position);
            }
        }
    }

    #[test]
    fn class_split_for_63_ues() {
        let mut counts = [0usize; 4];
        for id in 0..63 {
            let idx = match TrafficClass::for_ue(id) {
                TrafficClass::FullBuffer20M => 0,
                TrafficClass::UdpBursty20M => 1,
                TrafficClass::TcpBursty750k => 2,
                TrafficClass::TcpBursty150k => 3,
            };
            counts[idx] += 1;
        }
        assert_eq!(counts, [15, 16, 16, 16]);
    }

    #[test]
    fn exponential_sampler_mean() {
        let mut rng = stream_rng(3, Stream::Traffic);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_exp(0.5, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() / 0.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn tcp_150k_long_run_mean() {
        // Monte-Carlo oracle: 1000 s of 1 ms steps.
        let cfg = ScenarioConfig::default();
        let mut rng = stream_rng(11, Stream::Traffic);
        let mut src = TrafficSource::new(TrafficClass::TcpBursty150k, &cfg, &mut rng);
        let mut bytes = 0u64;
        for _ in 0..1_000_000 {
            bytes += src.generate_arrivals(0.001, &mut rng);
        }
        let rate = bytes as f64 * 8.0 / 1000.0;
        assert!((rate - 150e3).abs() / 150e3 < 0.05, "rate {rate}");
    }

    #[test]
    fn udp_long_run_mean() {
        let cfg = ScenarioConfig::default();
        let mut rng = stream_rng(12, Stream::Traffic);
        let mut src = TrafficSource::new(TrafficClass::UdpBursty20M, &cfg, &mut rng);
        let bytes: u64 = (0..100_000).map(|_| src.generate_arrivals(0.001, &mut rng)).sum();
        let rate = bytes as f64 * 8.0 / 100.0;
        assert!((rate - 20e6).abs() / 20e6 < 0.05, "rate {rate}");
    }

    #[test]
    fn off_phase_emits_nothing() {
        let mut rng = stream_rng(5, Stream::Traffic);
        let mut p = BurstProcess::new(1e6, 0.5, 0.5, &mut rng);
        p.state = Phase::Off;
        p.remaining = 1.0;
        assert_eq!(p.advance(0.5, &mut rng), 0);
    }

    #[test]
    fn full_buffer_is_infinite() {
        let cfg = ScenarioConfig::default();
        let mut rng = stream_rng(5, Stream::Traffic);
        let mut src = TrafficSource::new(TrafficClass::FullBuffer20M, &cfg, &mut rng);
        assert_eq!(src.generate_arrivals(0.001, &mut rng), INFINITE_BACKLOG);
    }
}
