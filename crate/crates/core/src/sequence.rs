//! Time-stamped pulse-sequence programs.
//!
//! A program is an ordered list of hard RF pulses, rectangular gradient lobes
//! and ADC windows. Builders cover the single-shot SE-MOLED sequence (four
//! excitations, one refocusing pulse, one EPI train), a plain spin echo used
//! as an analytic reference, and the EPI readout itself.
//!
//! k-space bookkeeping is in Nyquist steps of `2π/FOV`. The EPI trajectory
//! sits at grid position `(rows/2, cols/2)` when the ADC samples the center of
//! line `rows/2`. An echo that carries a net gradient moment `m` at that
//! instant peaks at grid position `center - m`.

use std::fmt::{self, Write as _};

use crate::error::{ForgeError, Result};
use crate::physics::{area_for_k_index, k_index_for_area};

/// Time step used for sample-accurate readout evolution, ms.
pub const READOUT_STEP_MS: f64 = 0.003;
/// Time step used away from the readout, ms.
pub const DEFAULT_STEP_MS: f64 = 0.1;
/// Fraction of each echo spacing spent on the phase-encoding blip.
pub const BLIP_FRACTION: f64 = 1.0 / 16.0;

/// Echo centers in quadrant units of `matrix/4`, as (readout, phase) moments
/// at the k-space center sample, listed in TE order.
pub const MOLED_QUADRANTS: [(i64, i64); 4] = [(1, 1), (-1, 1), (1, -1), (-1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Ro,
    Pe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTag {
    EchoShift,
    Readout,
    Blip,
    Crusher,
    Prephaser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfRole {
    /// Excitation feeding echo `echo` (index into the declared TE list), if any.
    Excitation { echo: Option<usize> },
    Refocusing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfPulse {
    pub flip_deg: f64,
    pub phase_deg: f64,
    pub role: RfRole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientLobe {
    pub axis: Axis,
    pub amplitude_mt_m: f64,
    pub tag: GradientTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adc {
    pub num_samples: usize,
    pub dwell_ms: f64,
    pub dest_line: usize,
    /// Samples are written right-to-left (negative readout lobe).
    pub reversed: bool,
}

impl Adc {
    /// Grid column that acquisition-order sample `s` is written to.
    #[inline]
    pub fn dest_col(&self, s: usize) -> usize {
        if self.reversed {
            self.num_samples - 1 - s
        } else {
            s
        }
    }

    /// Acquisition-order sample index that lands in grid column `col`.
    #[inline]
    pub fn sample_for_col(&self, col: usize) -> usize {
        self.dest_col(col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Rf(RfPulse),
    Gradient(GradientLobe),
    Adc(Adc),
    Delay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t_start_ms: f64,
    pub duration_ms: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn t_end_ms(&self) -> f64 {
        self.t_start_ms + self.duration_ms
    }

    /// Time of acquisition-order sample `s` of an ADC event.
    pub fn sample_time(&self, s: usize) -> Option<f64> {
        match self.kind {
            EventKind::Adc(adc) => Some(self.t_start_ms + (s as f64 + 0.5) * adc.dwell_ms),
            _ => None,
        }
    }

    fn rf(t: f64, flip_deg: f64, phase_deg: f64, role: RfRole) -> Self {
        Event {
            t_start_ms: t,
            duration_ms: 0.0,
            kind: EventKind::Rf(RfPulse { flip_deg, phase_deg, role }),
        }
    }

    fn grad(t: f64, dur: f64, axis: Axis, amp: f64, tag: GradientTag) -> Self {
        Event {
            t_start_ms: t,
            duration_ms: dur,
            kind: EventKind::Gradient(GradientLobe {
                axis,
                amplitude_mt_m: amp,
                tag,
            }),
        }
    }

    fn shifted(mut self, dt: f64) -> Self {
        self.t_start_ms += dt;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub fov_cm: f64,
    pub esp_ms: f64,
    pub dwell_ms: f64,
    /// Acceleration the echo spacing was chosen for (ETL rule); synthetic
    /// programs always acquire every line.
    pub acceleration: usize,
    /// Declared echo times, indexed by the `echo` field of excitation pulses.
    pub echo_tes_ms: Vec<f64>,
    /// Programmed (readout, phase) moment of each echo at the k-space center
    /// sample, in Nyquist steps.
    pub echo_offsets: Vec<(i64, i64)>,
}

/// An immutable, time-ordered pulse-sequence program.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceProgram {
    events: Vec<Event>,
    total_duration_ms: f64,
    meta: SequenceMeta,
}

impl SequenceProgram {
    /// Builds a program, sorting events by start time (stable).
    pub fn new(mut events: Vec<Event>, total_duration_ms: f64, meta: SequenceMeta) -> Self {
        events.sort_by(|a, b| a.t_start_ms.total_cmp(&b.t_start_ms));
        Self::from_parts(events, total_duration_ms, meta)
    }

    /// Builds a program keeping the event order as given.
    pub fn from_parts(events: Vec<Event>, total_duration_ms: f64, meta: SequenceMeta) -> Self {
        Self {
            events,
            total_duration_ms,
            meta,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn total_duration_ms(&self) -> f64 {
        self.total_duration_ms
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    /// Copy with a different declared TE list.
    pub fn with_declared_tes(&self, tes: Vec<f64>) -> Self {
        let mut p = self.clone();
        p.meta.echo_tes_ms = tes;
        p
    }

    /// Copy with each event passed through `f`.
    pub fn map_events(&self, mut f: impl FnMut(usize, &Event) -> Event) -> Self {
        Self {
            events: self.events.iter().enumerate().map(|(i, e)| f(i, e)).collect(),
            total_duration_ms: self.total_duration_ms,
            meta: self.meta.clone(),
        }
    }

    /// Copy with RF flips replaced by `f(index_among_rf, pulse)`.
    pub fn map_rf(&self, mut f: impl FnMut(usize, &RfPulse) -> f64) -> Self {
        let mut k = 0;
        self.map_events(|_, e| match e.kind {
            EventKind::Rf(rf) => {
                let flip = f(k, &rf);
                k += 1;
                Event {
                    kind: EventKind::Rf(RfPulse { flip_deg: flip, ..rf }),
                    ..*e
                }
            }
            _ => *e,
        })
    }

    pub fn rf_events(&self) -> impl Iterator<Item = (&Event, RfPulse)> {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Rf(rf) => Some((e, rf)),
            _ => None,
        })
    }

    pub fn adc_events(&self) -> impl Iterator<Item = (&Event, Adc)> {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Adc(a) => Some((e, a)),
            _ => None,
        })
    }

    pub fn gradient_events(&self) -> impl Iterator<Item = (&Event, GradientLobe)> {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::Gradient(g) => Some((e, g)),
            _ => None,
        })
    }

    /// Flip angles of all RF events in time order.
    pub fn flips(&self) -> Vec<f64> {
        self.rf_events().map(|(_, rf)| rf.flip_deg).collect()
    }

    fn adc_for_line(&self, line: usize) -> Option<(&Event, Adc)> {
        self.adc_events().find(|(_, a)| a.dest_line == line)
    }

    /// Acquisition time of the sample written to grid position `(line, col)`.
    pub fn sample_time_at(&self, line: usize, col: usize) -> Option<f64> {
        let (e, adc) = self.adc_for_line(line)?;
        if col >= adc.num_samples {
            return None;
        }
        e.sample_time(adc.sample_for_col(col))
    }

    /// Time at which the k-space center `(rows/2, cols/2)` is sampled.
    pub fn kspace_center_time(&self) -> Option<f64> {
        self.sample_time_at(self.meta.rows / 2, self.meta.cols / 2)
    }

    /// `[start, start + lines * esp)` of the EPI train.
    pub fn readout_window(&self) -> Option<(f64, f64)> {
        let start = self
            .adc_events()
            .map(|(e, _)| e.t_start_ms)
            .min_by(f64::total_cmp)?;
        let lines = self.adc_events().count() as f64;
        Some((start, start + lines * self.meta.esp_ms))
    }

    /// Net gradient moment in Nyquist steps accumulated over `[from, to]`,
    /// with the sign of everything accrued so far inverted at each
    /// refocusing pulse inside the interval.
    pub fn net_moment(&self, from_ms: f64, to_ms: f64) -> (f64, f64) {
        let flips: Vec<f64> = self
            .rf_events()
            .filter(|(e, rf)| rf.role == RfRole::Refocusing && e.t_start_ms > from_ms && e.t_start_ms <= to_ms)
            .map(|(e, _)| e.t_start_ms)
            .collect();
        let mut bounds = vec![from_ms];
        bounds.extend(flips.iter().copied());
        bounds.push(to_ms);
        let mut m = (0.0, 0.0);
        for w in bounds.windows(2) {
            // Negate what was accrued before this segment for each flip at its start.
            if w[0] != from_ms {
                m = (-m.0, -m.1);
            }
            let (a_ro, a_pe) = self.gradient_area(w[0], w[1]);
            m.0 += a_ro;
            m.1 += a_pe;
        }
        let fov = self.meta.fov_cm;
        (k_index_for_area(m.0, fov), k_index_for_area(m.1, fov))
    }

    /// Raw (RO, PE) gradient area in mT/m*ms over `[a, b]`.
    pub fn gradient_area(&self, a: f64, b: f64) -> (f64, f64) {
        let mut area = (0.0, 0.0);
        for (e, g) in self.gradient_events() {
            let lo = e.t_start_ms.max(a);
            let hi = e.t_end_ms().min(b);
            if hi > lo {
                let v = g.amplitude_mt_m * (hi - lo);
                match g.axis {
                    Axis::Ro => area.0 += v,
                    Axis::Pe => area.1 += v,
                }
            }
        }
        area
    }

    /// Excitation time for each declared echo.
    pub fn excitation_times(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.meta.echo_tes_ms.len()];
        for (e, rf) in self.rf_events() {
            if let RfRole::Excitation { echo: Some(i) } = rf.role {
                if i < out.len() {
                    out[i] = Some(e.t_start_ms);
                }
            }
        }
        out
    }

    /// Moment of echo `i` at the k-space center sample, by summing gradient
    /// areas from its excitation.
    pub fn echo_moment(&self, echo: usize) -> Option<(f64, f64)> {
        let t_exc = (*self.excitation_times().get(echo)?)?;
        let t_c = self.kspace_center_time()?;
        Some(self.net_moment(t_exc, t_c))
    }

    /// Grid location (row, col) where each echo's peak is expected.
    pub fn predicted_peaks(&self) -> Vec<(i64, i64)> {
        let cr = (self.meta.rows / 2) as f64;
        let cc = (self.meta.cols / 2) as f64;
        (0..self.meta.echo_tes_ms.len())
            .filter_map(|i| self.echo_moment(i))
            .map(|(ro, pe)| ((cr - pe).round() as i64, (cc - ro).round() as i64))
            .collect()
    }

    /// Time from each excitation to the acquisition of its echo peak. This is
    /// the transverse lifetime that sets the T2 weighting of that echo.
    pub fn effective_decay_times(&self) -> Vec<f64> {
        let exc = self.excitation_times();
        self.predicted_peaks()
            .iter()
            .zip(exc)
            .filter_map(|(&(r, c), t)| {
                let t_exc = t?;
                let ts = self.sample_time_at(r as usize, c as usize)?;
                Some(ts - t_exc)
            })
            .collect()
    }

    /// Spin-echo formation time for each declared echo: `2 t_ref - t_exc`.
    pub fn spin_echo_times(&self) -> Vec<Option<f64>> {
        let t_ref = self
            .rf_events()
            .find(|(_, rf)| rf.role == RfRole::Refocusing)
            .map(|(e, _)| e.t_start_ms);
        self.excitation_times()
            .into_iter()
            .map(|t| Some(2.0 * t_ref? - t?))
            .collect()
    }
}

/// Parameters of the single-shot SE-MOLED sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MoledParams {
    pub matrix: usize,
    pub fov_cm: f64,
    pub esp_ms: f64,
    pub tes_ms: [f64; 4],
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub excitation_phase_deg: f64,
    pub refocusing_phase_deg: f64,
    pub echo_shift_ms: f64,
    pub crusher_ms: f64,
    pub prephaser_ms: f64,
    pub acceleration: usize,
}

impl Default for MoledParams {
    fn default() -> Self {
        Self {
            matrix: 128,
            fov_cm: 22.0,
            esp_ms: 0.465,
            tes_ms: [22.0, 52.0, 82.0, 110.0],
            alpha_deg: 30.0,
            beta_deg: 180.0,
            excitation_phase_deg: 0.0,
            refocusing_phase_deg: 90.0,
            echo_shift_ms: 1.0,
            crusher_ms: 2.0,
            prephaser_ms: 1.0,
            acceleration: 2,
        }
    }
}

impl MoledParams {
    /// Smaller acquisition with the same echo-train length.
    pub fn desk() -> Self {
        Self {
            matrix: 64,
            esp_ms: 0.93,
            ..Self::default()
        }
    }
}

fn check_matrix(matrix: usize) -> Result<()> {
    if matrix < 4 || matrix % 4 != 0 {
        return Err(ForgeError::invalid(format!(
            "matrix must be a positive multiple of 4, got {matrix}"
        )));
    }
    Ok(())
}

/// Dwell time for an echo spacing once the blip is carved out.
pub fn dwell_for_esp(matrix: usize, esp_ms: f64) -> f64 {
    esp_ms * (1.0 - BLIP_FRACTION) / matrix as f64
}

/// Echo-train length in ms.
pub fn echo_train_ms(lines: usize, esp_ms: f64) -> f64 {
    lines as f64 * esp_ms
}

/// Fully sampled blipped EPI train starting at t = 0.
///
/// Each line is a rectangular readout lobe of `matrix` dwell periods with
/// alternating polarity, followed by a phase-encoding blip of one Nyquist
/// step. Line `l` is written to k-space row `l`; odd lines are reversed.
pub fn build_epi_readout(matrix: usize, fov_cm: f64, esp_ms: f64, acceleration: usize) -> Result<Vec<Event>> {
    check_matrix(matrix)?;
    if acceleration == 0 || matrix % acceleration != 0 {
        return Err(ForgeError::invalid(format!(
            "matrix {matrix} not divisible by acceleration {acceleration}"
        )));
    }
    if !(esp_ms > 0.0) || !(fov_cm > 0.0) {
        return Err(ForgeError::invalid("echo spacing and FOV must be positive"));
    }
    let dwell = dwell_for_esp(matrix, esp_ms);
    let lobe = matrix as f64 * dwell;
    let blip = esp_ms - lobe;
    let ro_amp = area_for_k_index(1.0, fov_cm) / dwell;
    let blip_amp = area_for_k_index(1.0, fov_cm) / blip;
    let mut events = Vec::with_capacity(3 * matrix);
    for line in 0..matrix {
        let t = line as f64 * esp_ms;
        let sign = if line % 2 == 0 { 1.0 } else { -1.0 };
        events.push(Event::grad(t, lobe, Axis::Ro, sign * ro_amp, GradientTag::Readout));
        events.push(Event {
            t_start_ms: t,
            duration_ms: lobe,
            kind: EventKind::Adc(Adc {
                num_samples: matrix,
                dwell_ms: dwell,
                dest_line: line,
                reversed: line % 2 == 1,
            }),
        });
        if line + 1 < matrix {
            events.push(Event::grad(t + lobe, blip, Axis::Pe, blip_amp, GradientTag::Blip));
        }
    }
    Ok(events)
}

/// Readout and phase prephasers bringing the trajectory to the first sample
/// of line 0, spanning `[t, t + dur]`.
fn prephasers(t: f64, dur: f64, matrix: usize, fov_cm: f64) -> [Event; 2] {
    let half = (matrix / 2) as f64;
    [
        Event::grad(t, dur, Axis::Ro, -area_for_k_index(half + 0.5, fov_cm) / dur, GradientTag::Prephaser),
        Event::grad(t, dur, Axis::Pe, -area_for_k_index(half, fov_cm) / dur, GradientTag::Prephaser),
    ]
}

/// Single-shot SE-MOLED: four excitations, echo-shifting lobes G1-G4, a
/// crushed refocusing pulse and a full EPI readout.
///
/// Excitation `i` happens `TE_i / 2` before the refocusing pulse so that its
/// spin echo forms `TE_i` after it. The echo-shifting lobes place echo `i` at
/// `MOLED_QUADRANTS[i] * matrix / 4` (as a moment at the center sample).
pub fn build_se_moled(p: &MoledParams) -> Result<SequenceProgram> {
    check_matrix(p.matrix)?;
    let n = p.matrix;
    let tes = p.tes_ms;
    if tes.iter().any(|&t| !(t > 0.0)) || tes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ForgeError::invalid(format!("TEs must be positive and strictly increasing: {tes:?}")));
    }
    let t_ref = tes[3] / 2.0;
    let exc_times: Vec<f64> = tes.iter().map(|te| t_ref - te / 2.0).collect();
    let offsets: Vec<(i64, i64)> = MOLED_QUADRANTS
        .iter()
        .map(|&(r, c)| (r * n as i64 / 4, c * n as i64 / 4))
        .collect();

    // Excitations in time order: the longest TE goes first.
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| exc_times[a].total_cmp(&exc_times[b]));

    // After refocusing, echo i carries minus the sum of the lobes played after
    // its excitation, so that sum must equal -offset_i.
    let target = |i: usize| (-(offsets[i].0 as f64), -(offsets[i].1 as f64));
    let mut lobes = Vec::with_capacity(4);
    for (j, &i) in order.iter().enumerate() {
        let (s_ro, s_pe) = target(i);
        let (n_ro, n_pe) = order.get(j + 1).map(|&k| target(k)).unwrap_or((0.0, 0.0));
        lobes.push((i, s_ro - n_ro, s_pe - n_pe));
    }

    let crusher_start = t_ref - p.crusher_ms;
    let mut events = Vec::new();
    for (j, &(i, a_ro, a_pe)) in lobes.iter().enumerate() {
        let t = exc_times[i];
        let end = t + p.echo_shift_ms;
        let next = order.get(j + 1).map(|&k| exc_times[k]).unwrap_or(crusher_start);
        if end > next + 1e-12 {
            return Err(ForgeError::InvalidTiming(format!(
                "echo-shift lobe after excitation for TE {} ends at {end} ms, past next event at {next} ms",
                tes[i]
            )));
        }
        events.push(Event::rf(t, p.alpha_deg, p.excitation_phase_deg, RfRole::Excitation { echo: Some(i) }));
        let d = p.echo_shift_ms;
        events.push(Event::grad(t, d, Axis::Ro, area_for_k_index(a_ro, p.fov_cm) / d, GradientTag::EchoShift));
        events.push(Event::grad(t, d, Axis::Pe, area_for_k_index(a_pe, p.fov_cm) / d, GradientTag::EchoShift));
    }

    let max_lobe = lobes
        .iter()
        .flat_map(|&(_, a, b)| [a.abs(), b.abs()])
        .fold(0.0, f64::max);
    let crush_k = (4.0 * max_lobe).max(n as f64);
    let crush_amp = area_for_k_index(crush_k, p.fov_cm) / p.crusher_ms;
    events.push(Event::grad(crusher_start, p.crusher_ms, Axis::Ro, crush_amp, GradientTag::Crusher));
    events.push(Event::rf(t_ref, p.beta_deg, p.refocusing_phase_deg, RfRole::Refocusing));
    events.push(Event::grad(t_ref, p.crusher_ms, Axis::Ro, crush_amp, GradientTag::Crusher));

    let t_pre = t_ref + p.crusher_ms;
    events.extend(prephasers(t_pre, p.prephaser_ms, n, p.fov_cm));
    let t_ro = t_pre + p.prephaser_ms;
    let readout = build_epi_readout(n, p.fov_cm, p.esp_ms, p.acceleration)?;
    events.extend(readout.into_iter().map(|e| e.shifted(t_ro)));

    let window_end = t_ro + echo_train_ms(n, p.esp_ms);
    for (i, &te) in tes.iter().enumerate() {
        let t_se = exc_times[i] + te;
        if t_se < t_ro || t_se > window_end {
            return Err(ForgeError::InvalidTiming(format!(
                "spin echo {i} at {t_se} ms falls outside readout window [{t_ro}, {window_end}] ms"
            )));
        }
    }

    let meta = SequenceMeta {
        name: "se-moled".into(),
        rows: n,
        cols: n,
        fov_cm: p.fov_cm,
        esp_ms: p.esp_ms,
        dwell_ms: dwell_for_esp(n, p.esp_ms),
        acceleration: p.acceleration,
        echo_tes_ms: tes.to_vec(),
        echo_offsets: offsets,
    };
    Ok(SequenceProgram::new(events, window_end, meta))
}

/// Parameters of the reference spin-echo sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SeParams {
    pub te_ms: f64,
    pub tr_ms: f64,
    pub matrix: usize,
    pub fov_cm: f64,
    /// Longest echo spacing to use; shortened when the readout would not fit
    /// between the refocusing pulse and TE.
    pub max_esp_ms: f64,
}

impl SeParams {
    pub fn new(te_ms: f64, tr_ms: f64, matrix: usize, fov_cm: f64) -> Self {
        Self {
            te_ms,
            tr_ms,
            matrix,
            fov_cm,
            max_esp_ms: 1.0,
        }
    }
}

/// 90° excitation, 180° at TE/2 between balanced crushers, and a blipped EPI
/// readout whose k-space center sample is acquired exactly at TE.
pub fn build_se(p: &SeParams) -> Result<SequenceProgram> {
    check_matrix(p.matrix)?;
    if !(p.te_ms > 0.0) {
        return Err(ForgeError::invalid("TE must be positive"));
    }
    let n = p.matrix;
    let half = (n / 2) as f64;
    let crusher = (p.te_ms / 8.0).min(2.0);
    let pre = (p.te_ms / 16.0).min(1.0);
    // Center sample sits this many echo spacings after readout start.
    let center_in_esp = half + (half + 0.5) * (1.0 - BLIP_FRACTION) / n as f64;
    let available = p.te_ms / 2.0 - crusher - pre;
    let esp = p.max_esp_ms.min(available / center_in_esp);
    let dwell = dwell_for_esp(n, esp);
    let t_ref = p.te_ms / 2.0;
    let t_ro = p.te_ms - half * esp - (half + 0.5) * dwell;

    let crush_amp = area_for_k_index(2.0 * n as f64, p.fov_cm) / crusher;
    let mut events = vec![
        Event::rf(0.0, 90.0, 0.0, RfRole::Excitation { echo: Some(0) }),
        Event::grad(t_ref - crusher, crusher, Axis::Ro, crush_amp, GradientTag::Crusher),
        Event::rf(t_ref, 180.0, 90.0, RfRole::Refocusing),
        Event::grad(t_ref, crusher, Axis::Ro, crush_amp, GradientTag::Crusher),
    ];
    events.extend(prephasers(t_ro - pre, pre, n, p.fov_cm));
    events.extend(build_epi_readout(n, p.fov_cm, esp, 1)?.into_iter().map(|e| e.shifted(t_ro)));
    let end = t_ro + echo_train_ms(n, esp);
    let meta = SequenceMeta {
        name: "se".into(),
        rows: n,
        cols: n,
        fov_cm: p.fov_cm,
        esp_ms: esp,
        dwell_ms: dwell,
        acceleration: 1,
        echo_tes_ms: vec![p.te_ms],
        echo_offsets: vec![(0, 0)],
    };
    Ok(SequenceProgram::new(events, end.max(p.tr_ms), meta))
}

/// A single problem found by [`validate_program`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonMonotonicStart { index: usize },
    NegativeDuration { index: usize },
    RfWithDuration { index: usize },
    NonFiniteGradient { index: usize },
    BadAdc { index: usize, reason: String },
    AdcOverlap { index: usize },
    LineCoverage { line: usize, count: usize },
    LineOutOfRange { line: usize },
    UnknownEcho { echo: usize },
    MissingRefocusing,
    EchoTiming { echo: usize, declared_ms: f64, actual_ms: f64 },
    EchoOutsideReadout { echo: usize, t_ms: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonMonotonicStart { index } => write!(f, "event {index} starts before its predecessor"),
            Violation::NegativeDuration { index } => write!(f, "event {index} has negative duration"),
            Violation::RfWithDuration { index } => write!(f, "RF event {index} is not a hard pulse"),
            Violation::NonFiniteGradient { index } => write!(f, "gradient event {index} is not finite"),
            Violation::BadAdc { index, reason } => write!(f, "ADC event {index}: {reason}"),
            Violation::AdcOverlap { index } => write!(f, "ADC event {index} overlaps the previous ADC"),
            Violation::LineCoverage { line, count } => write!(f, "k-space line {line} written {count} times"),
            Violation::LineOutOfRange { line } => write!(f, "ADC writes line {line} outside the matrix"),
            Violation::UnknownEcho { echo } => write!(f, "excitation refers to undeclared echo {echo}"),
            Violation::MissingRefocusing => write!(f, "echoes declared but no refocusing pulse"),
            Violation::EchoTiming {
                echo,
                declared_ms,
                actual_ms,
            } => write!(f, "echo {echo}: declared TE {declared_ms} ms, program forms it at {actual_ms} ms"),
            Violation::EchoOutsideReadout { echo, t_ms } => {
                write!(f, "echo {echo} forms at {t_ms} ms, outside the readout window")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks timing monotonicity, ADC coverage and echo formation times.
pub fn validate_program(p: &SequenceProgram) -> ValidationReport {
    let mut v = Vec::new();
    let meta = p.meta();
    let events = p.events();
    for (i, e) in events.iter().enumerate() {
        if i > 0 && e.t_start_ms < events[i - 1].t_start_ms {
            v.push(Violation::NonMonotonicStart { index: i });
        }
        if e.duration_ms < 0.0 || !e.duration_ms.is_finite() {
            v.push(Violation::NegativeDuration { index: i });
        }
        match e.kind {
            EventKind::Rf(_) if e.duration_ms != 0.0 => v.push(Violation::RfWithDuration { index: i }),
            EventKind::Gradient(g) if !g.amplitude_mt_m.is_finite() => {
                v.push(Violation::NonFiniteGradient { index: i })
            }
            EventKind::Adc(a) => {
                if !(a.dwell_ms > 0.0) {
                    v.push(Violation::BadAdc {
                        index: i,
                        reason: "dwell must be positive".into(),
                    });
                }
                if a.num_samples != meta.cols {
                    v.push(Violation::BadAdc {
                        index: i,
                        reason: format!("{} samples for {} columns", a.num_samples, meta.cols),
                    });
                }
            }
            _ => {}
        }
    }

    let mut adcs: Vec<(usize, &Event, Adc)> = events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e.kind {
            EventKind::Adc(a) => Some((i, e, a)),
            _ => None,
        })
        .collect();
    adcs.sort_by(|a, b| a.1.t_start_ms.total_cmp(&b.1.t_start_ms));
    for w in adcs.windows(2) {
        if w[1].1.t_start_ms < w[0].1.t_end_ms() - 1e-9 {
            v.push(Violation::AdcOverlap { index: w[1].0 });
        }
    }
    let mut counts = vec![0usize; meta.rows];
    for (_, _, a) in &adcs {
        match counts.get_mut(a.dest_line) {
            Some(c) => *c += 1,
            None => v.push(Violation::LineOutOfRange { line: a.dest_line }),
        }
    }
    for (line, &count) in counts.iter().enumerate() {
        if count != 1 {
            v.push(Violation::LineCoverage { line, count });
        }
    }

    let has_refocus = p.rf_events().any(|(_, rf)| rf.role == RfRole::Refocusing);
    for (_, rf) in p.rf_events() {
        if let RfRole::Excitation { echo: Some(i) } = rf.role {
            if i >= meta.echo_tes_ms.len() {
                v.push(Violation::UnknownEcho { echo: i });
            }
        }
    }
    if !meta.echo_tes_ms.is_empty() && !has_refocus {
        v.push(Violation::MissingRefocusing);
    }
    if has_refocus {
        let window = p.readout_window();
        let excs = p.excitation_times();
        for (i, t_se) in p.spin_echo_times().into_iter().enumerate() {
            let (Some(t_se), Some(t_exc)) = (t_se, excs[i]) else {
                continue;
            };
            let actual = t_se - t_exc;
            let declared = meta.echo_tes_ms[i];
            if (actual - declared).abs() > meta.dwell_ms + 1e-9 {
                v.push(Violation::EchoTiming {
                    echo: i,
                    declared_ms: declared,
                    actual_ms: actual,
                });
            }
            if let Some((a, b)) = window {
                if t_se < a || t_se > b {
                    v.push(Violation::EchoOutsideReadout { echo: i, t_ms: t_se });
                }
            }
        }
    }
    ValidationReport { violations: v }
}

const TEXT_HEADER: &str = "# forge-seq v1";

fn axis_str(a: Axis) -> &'static str {
    match a {
        Axis::Ro => "RO",
        Axis::Pe => "PE",
    }
}

fn tag_str(t: GradientTag) -> &'static str {
    match t {
        GradientTag::EchoShift => "echo_shift",
        GradientTag::Readout => "readout",
        GradientTag::Blip => "blip",
        GradientTag::Crusher => "crusher",
        GradientTag::Prephaser => "prephaser",
    }
}

/// Human-readable event list, one event per line.
///
/// ```text
/// # forge-seq v1
/// META name=se-moled rows=64 cols=64 fov_cm=22 esp_ms=0.93 ...
/// RF 0 0 flip=30 phase=0 role=exc:3
/// GRAD 0 1 axis=RO amp=-3.4 tag=echo_shift
/// ADC 58 0.87 n=64 dwell=0.0136 line=0 rev=0
/// ```
pub fn to_text(p: &SequenceProgram) -> String {
    let m = p.meta();
    let mut s = String::new();
    let _ = writeln!(s, "{TEXT_HEADER}");
    let tes: Vec<String> = m.echo_tes_ms.iter().map(|t| t.to_string()).collect();
    let offs: Vec<String> = m.echo_offsets.iter().map(|(a, b)| format!("{a}:{b}")).collect();
    let _ = writeln!(
        s,
        "META name={} rows={} cols={} fov_cm={} esp_ms={} dwell_ms={} acceleration={} total_ms={} tes_ms={} offsets={}",
        m.name,
        m.rows,
        m.cols,
        m.fov_cm,
        m.esp_ms,
        m.dwell_ms,
        m.acceleration,
        p.total_duration_ms(),
        if tes.is_empty() { "-".into() } else { tes.join(",") },
        if offs.is_empty() { "-".into() } else { offs.join(",") },
    );
    for e in p.events() {
        match e.kind {
            EventKind::Rf(rf) => {
                let role = match rf.role {
                    RfRole::Refocusing => "ref".to_string(),
                    RfRole::Excitation { echo: Some(i) } => format!("exc:{i}"),
                    RfRole::Excitation { echo: None } => "exc".to_string(),
                };
                let _ = writeln!(
                    s,
                    "RF {} {} flip={} phase={} role={}",
                    e.t_start_ms, e.duration_ms, rf.flip_deg, rf.phase_deg, role
                );
            }
            EventKind::Gradient(g) => {
                let _ = writeln!(
                    s,
                    "GRAD {} {} axis={} amp={} tag={}",
                    e.t_start_ms,
                    e.duration_ms,
                    axis_str(g.axis),
                    g.amplitude_mt_m,
                    tag_str(g.tag)
                );
            }
            EventKind::Adc(a) => {
                let _ = writeln!(
                    s,
                    "ADC {} {} n={} dwell={} line={} rev={}",
                    e.t_start_ms,
                    e.duration_ms,
                    a.num_samples,
                    a.dwell_ms,
                    a.dest_line,
                    u8::from(a.reversed)
                );
            }
            EventKind::Delay => {
                let _ = writeln!(s, "DELAY {} {}", e.t_start_ms, e.duration_ms);
            }
        }
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> ForgeError {
    ForgeError::Config { line, msg: msg.into() }
}

fn kv<'a>(tokens: &[&'a str], key: &str, line: usize) -> Result<&'a str> {
    tokens
        .iter()
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| parse_err(line, format!("missing {key}=")))
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, format!("bad number '{s}'")))
}

/// Parses the output of [`to_text`]. Event order is preserved as written.
pub fn from_text(text: &str) -> Result<SequenceProgram> {
    let mut meta = None;
    let mut total = 0.0;
    let mut events = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let kind = tokens[0];
        if kind == "META" {
            fn list(s: &str) -> Vec<&str> {
                if s == "-" {
                    Vec::new()
                } else {
                    s.split(',').collect()
                }
            }
            let tes = list(kv(&tokens, "tes_ms", line)?)
                .into_iter()
                .map(|t| num(t, line))
                .collect::<Result<Vec<f64>>>()?;
            let offsets = list(kv(&tokens, "offsets", line)?)
                .into_iter()
                .map(|o| {
                    let (a, b) = o.split_once(':').ok_or_else(|| parse_err(line, "bad offset"))?;
                    Ok((num(a, line)?, num(b, line)?))
                })
                .collect::<Result<Vec<(i64, i64)>>>()?;
            total = num(kv(&tokens, "total_ms", line)?, line)?;
            meta = Some(SequenceMeta {
                name: kv(&tokens, "name", line)?.to_string(),
                rows: num(kv(&tokens, "rows", line)?, line)?,
                cols: num(kv(&tokens, "cols", line)?, line)?,
                fov_cm: num(kv(&tokens, "fov_cm", line)?, line)?,
                esp_ms: num(kv(&tokens, "esp_ms", line)?, line)?,
                dwell_ms: num(kv(&tokens, "dwell_ms", line)?, line)?,
                acceleration: num(kv(&tokens, "acceleration", line)?, line)?,
                echo_tes_ms: tes,
                echo_offsets: offsets,
            });
            continue;
        }
        if tokens.len() < 3 {
            return Err(parse_err(line, "expected kind, start and duration"));
        }
        let t: f64 = num(tokens[1], line)?;
        let d: f64 = num(tokens[2], line)?;
        let ek = match kind {
            "RF" => {
                let role = match kv(&tokens, "role", line)? {
                    "ref" => RfRole::Refocusing,
                    "exc" => RfRole::Excitation { echo: None },
                    r => match r.strip_prefix("exc:") {
                        Some(i) => RfRole::Excitation { echo: Some(num(i, line)?) },
                        None => return Err(parse_err(line, format!("bad role '{r}'"))),
                    },
                };
                EventKind::Rf(RfPulse {
                    flip_deg: num(kv(&tokens, "flip", line)?, line)?,
                    phase_deg: num(kv(&tokens, "phase", line)?, line)?,
                    role,
                })
            }
            "GRAD" => {
                let axis = match kv(&tokens, "axis", line)? {
                    "RO" => Axis::Ro,
                    "PE" => Axis::Pe,
                    a => return Err(parse_err(line, format!("bad axis '{a}'"))),
                };
                let tag = match kv(&tokens, "tag", line)? {
                    "echo_shift" => GradientTag::EchoShift,
                    "readout" => GradientTag::Readout,
                    "blip" => GradientTag::Blip,
                    "crusher" => GradientTag::Crusher,
                    "prephaser" => GradientTag::Prephaser,
                    g => return Err(parse_err(line, format!("bad tag '{g}'"))),
                };
                EventKind::Gradient(GradientLobe {
                    axis,
                    amplitude_mt_m: num(kv(&tokens, "amp", line)?, line)?,
                    tag,
                })
            }
            "ADC" => EventKind::Adc(Adc {
                num_samples: num(kv(&tokens, "n", line)?, line)?,
                dwell_ms: num(kv(&tokens, "dwell", line)?, line)?,
                dest_line: num(kv(&tokens, "line", line)?, line)?,
                reversed: kv(&tokens, "rev", line)? == "1",
            }),
            "DELAY" => EventKind::Delay,
            other => return Err(parse_err(line, format!("unknown event kind '{other}'"))),
        };
        events.push(Event {
            t_start_ms: t,
            duration_ms: d,
            kind: ek,
        });
    }
    let meta = meta.ok_or_else(|| parse_err(0, "missing META line"))?;
    Ok(SequenceProgram::from_parts(events, total, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_moled_has_five_rf() {
        let p = build_se_moled(&MoledParams::default()).unwrap();
        assert_eq!(p.flips(), vec![30.0, 30.0, 30.0, 30.0, 180.0]);
        let (a, b) = p.readout_window().unwrap();
        assert!(((b - a) - 59.52).abs() < 1e-9);
        assert!(p.total_duration_ms() < 300.0);
    }

    #[test]
    fn moled_echo_moments_hit_quadrants() {
        for params in [MoledParams::default(), MoledParams::desk()] {
            let p = build_se_moled(&params).unwrap();
            let n = params.matrix as f64;
            for i in 0..4 {
                let (ro, pe) = p.echo_moment(i).unwrap();
                let (qr, qp) = MOLED_QUADRANTS[i];
                assert!((ro - qr as f64 * n / 4.0).abs() < 1e-9, "echo {i} ro {ro}");
                assert!((pe - qp as f64 * n / 4.0).abs() < 1e-9, "echo {i} pe {pe}");
            }
        }
    }

    #[test]
    fn moled_excitation_order_and_spacing() {
        let p = build_se_moled(&MoledParams::default()).unwrap();
        let exc = p.excitation_times();
        assert_eq!(exc[3], Some(0.0));
        assert!((exc[0].unwrap() - 44.0).abs() < 1e-12);
        let se = p.spin_echo_times();
        for (i, te) in [22.0, 52.0, 82.0, 110.0].iter().enumerate() {
            assert!((se[i].unwrap() - exc[i].unwrap() - te).abs() < 1e-12);
        }
    }

    #[test]
    fn crushers_exceed_echo_shift_moments() {
        let p = build_se_moled(&MoledParams::desk()).unwrap();
        let fov = p.meta().fov_cm;
        let max_shift = p
            .gradient_events()
            .filter(|(_, g)| g.tag == GradientTag::EchoShift)
            .map(|(e, g)| k_index_for_area((g.amplitude_mt_m * e.duration_ms).abs(), fov))
            .fold(0.0, f64::max);
        let crushers: Vec<f64> = p
            .gradient_events()
            .filter(|(_, g)| g.tag == GradientTag::Crusher)
            .map(|(e, g)| k_index_for_area(g.amplitude_mt_m * e.duration_ms, fov))
            .collect();
        assert_eq!(crushers.len(), 2);
        assert_eq!(crushers[0], crushers[1]);
        assert!(crushers[0] >= 4.0 * max_shift - 1e-9);
    }

    #[test]
    fn moled_rejects_bad_timing() {
        let mut p = MoledParams::default();
        p.tes_ms = [52.0, 22.0, 82.0, 110.0];
        assert!(build_se_moled(&p).is_err());
        let mut p = MoledParams::default();
        p.tes_ms = [2.0, 52.0, 82.0, 110.0];
        assert!(matches!(build_se_moled(&p), Err(ForgeError::InvalidTiming(_))));
        let mut p = MoledParams::default();
        p.tes_ms = [22.0, 52.0, 82.0, 200.0];
        assert!(matches!(build_se_moled(&p), Err(ForgeError::InvalidTiming(_))));
    }

    #[test]
    fn epi_structure() {
        let ev = build_epi_readout(128, 22.0, 0.465, 2).unwrap();
        let lobes: Vec<f64> = ev
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Gradient(g) if g.tag == GradientTag::Readout => Some(g.amplitude_mt_m),
                _ => None,
            })
            .collect();
        let blips = ev
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Gradient(g) if g.tag == GradientTag::Blip))
            .count();
        assert_eq!(lobes.len(), 128);
        assert_eq!(blips, 127);
        assert!(lobes.windows(2).all(|w| w[0] * w[1] < 0.0));
        // Line order maps monotonically onto phase-encoding rows.
        let lines: Vec<usize> = ev
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Adc(a) => Some(a.dest_line),
                _ => None,
            })
            .collect();
        assert_eq!(lines, (0..128).collect::<Vec<_>>());
        assert!(build_epi_readout(130, 22.0, 0.465, 4).is_err());
    }

    #[test]
    fn consistent_echo_train_length() {
        let a = echo_train_ms(128, 0.465);
        let b = echo_train_ms(64, 0.93);
        assert!((a - 59.52).abs() < 1e-9 && (b - 59.52).abs() < 1e-9);
    }

    #[test]
    fn se_timing() {
        for te in [35.0, 50.0, 70.0, 90.0] {
            let p = build_se(&SeParams::new(te, 3000.0, 64, 22.0)).unwrap();
            assert_eq!(p.flips(), vec![90.0, 180.0]);
            let t_ref = p.rf_events().nth(1).unwrap().0.t_start_ms;
            assert_eq!(t_ref, te / 2.0);
            assert!((p.kspace_center_time().unwrap() - te).abs() < 1e-9);
            let m = p.echo_moment(0).unwrap();
            assert!(m.0.abs() < 1e-9 && m.1.abs() < 1e-9, "{m:?}");
            assert!(validate_program(&p).is_ok(), "{:?}", validate_program(&p));
        }
    }

    #[test]
    fn validation_catches_problems() {
        let p = build_se_moled(&MoledParams::desk()).unwrap();
        assert_eq!(validate_program(&p).violations, vec![]);

        let reordered = p.with_declared_tes(vec![52.0, 22.0, 82.0, 110.0]);
        let r = validate_program(&reordered);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::EchoTiming { .. })));

        let dup = p.map_events(|_, e| match e.kind {
            EventKind::Adc(a) if a.dest_line == 5 => Event {
                kind: EventKind::Adc(Adc { dest_line: 4, ..a }),
                ..*e
            },
            _ => *e,
        });
        let r = validate_program(&dup);
        assert!(r.violations.contains(&Violation::LineCoverage { line: 4, count: 2 }));
        assert!(r.violations.contains(&Violation::LineCoverage { line: 5, count: 0 }));
    }

    #[test]
    fn text_round_trip() {
        let p = build_se_moled(&MoledParams::desk()).unwrap();
        let text = to_text(&p);
        assert!(text.starts_with(TEXT_HEADER));
        assert_eq!(from_text(&text).unwrap(), p);
        assert!(from_text("RF 0 0 flip=1 phase=0 role=ref").is_err());
    }
}
