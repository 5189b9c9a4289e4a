//! Expected statistics of a dedicated-fiber link.
//!
//! Per pulse of intensity `k`:
//!
//! ```text
//! eta_ch  = 10^(-alpha L / 10)
//! eta_sys = eta_ch * eta_Bob
//! D_k     = 1 - (1 - 2 p_dc) exp(-eta_sys k)       detection, no afterpulses
//! R_k     = D_k (1 + p_ap)                          detection incl. afterpulses
//! e_k     = p_dc + e_mis (1 - exp(-eta k)) + p_ap D_k / 2
//! ```
//!
//! where `eta` in the misalignment term is selected by [`MisalignmentModel`].

use crate::counts::ObservedCounts;
use crate::intensity::IntensitySettings;
use crate::secrecy::SecurityParams;
use crate::{math, Error, Result};

/// Which transmittance scales the optical misalignment term of `e_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MisalignmentModel {
    /// `e_mis (1 - exp(-eta_sys k))`: misaligned photons must still be
    /// detected, so the term tracks the detection rate.
    #[default]
    SystemTransmittance,
    /// `e_mis (1 - exp(-eta_ch k))`, ignoring the detector efficiency.
    ChannelTransmittance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelParams {
    pub length_km: f64,
    /// dB/km.
    pub attenuation: f64,
    pub eta_bob: f64,
    pub p_dc: f64,
    pub p_ap: f64,
    pub e_mis: f64,
    pub misalignment: MisalignmentModel,
}

impl ChannelParams {
    /// 0.2 dB/km fiber; InGaAs APDs with 10 % efficiency, 6e-7 dark counts
    /// and 4 % afterpulsing; 0.5 % optical misalignment.
    pub fn reference(length_km: f64) -> Self {
        Self {
            length_km,
            attenuation: 0.2,
            eta_bob: 0.10,
            p_dc: 6e-7,
            p_ap: 0.04,
            e_mis: 5e-3,
            misalignment: MisalignmentModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(Error::InvalidChannel("length must be finite and >= 0"));
        }
        if !(self.attenuation >= 0.0 && self.attenuation.is_finite()) {
            return Err(Error::InvalidChannel("attenuation must be finite and >= 0"));
        }
        if !prob(self.eta_bob) {
            return Err(Error::InvalidChannel("eta_bob must lie in [0, 1]"));
        }
        if !(self.p_dc >= 0.0 && self.p_dc <= 0.5) {
            return Err(Error::InvalidChannel("p_dc must lie in [0, 0.5]"));
        }
        if !prob(self.p_ap) {
            return Err(Error::InvalidChannel("p_ap must lie in [0, 1]"));
        }
        if !prob(self.e_mis) {
            return Err(Error::InvalidChannel("e_mis must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn eta_ch(&self) -> f64 {
        channel_transmittance(self.length_km, self.attenuation)
    }

    pub fn eta_sys(&self) -> f64 {
        self.eta_ch() * self.eta_bob
    }

    /// Transmittance used inside the misalignment error term.
    pub fn eta_misalignment(&self) -> f64 {
        match self.misalignment {
            MisalignmentModel::SystemTransmittance => self.eta_sys(),
            MisalignmentModel::ChannelTransmittance => self.eta_ch(),
        }
    }
}

/// `10^(-alpha L / 10)`.
pub fn channel_transmittance(length_km: f64, attenuation: f64) -> f64 {
    math::pow(10.0, -attenuation * length_km / 10.0)
}

/// `(D_k, R_k)`: detection probability per pulse without and with
/// afterpulses.
pub fn detection_rates(k: f64, ch: &ChannelParams) -> (f64, f64) {
    let x = ch.eta_sys() * k;
    // 1 - (1 - 2 p_dc) e^{-x}, without cancellation at small x.
    let d = -math::expm1(-x) + 2.0 * ch.p_dc * math::exp(-x);
    (d, d * (1.0 + ch.p_ap))
}

/// Per-pulse bit-error probability `e_k`.
pub fn error_prob(k: f64, ch: &ChannelParams) -> f64 {
    let (d, _) = detection_rates(k, ch);
    ch.p_dc - ch.e_mis * math::expm1(-ch.eta_misalignment() * k) + ch.p_ap * d / 2.0
}

/// One evaluation point: protocol choices plus the fixed environment.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolPoint {
    pub q_x: f64,
    pub intensities: IntensitySettings,
    /// Post-processing block size `n_X`.
    pub n_x_target: f64,
    pub channel: ChannelParams,
    pub security: SecurityParams,
}

impl ProtocolPoint {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_x > 0.0 && self.q_x < 1.0) {
            return Err(Error::InvalidPoint("q_x must lie in (0, 1)"));
        }
        if !(self.n_x_target >= 1.0 && self.n_x_target.is_finite()) {
            return Err(Error::InvalidPoint("n_X must be finite and >= 1"));
        }
        self.channel.validate()?;
        self.security.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpectedStatistics {
    pub counts: ObservedCounts,
    /// Pulses needed for the expected X-basis total to equal `n_X`.
    pub pulses: f64,
}

/// Expected counts after `pulses` pulses.
///
/// Sifting keeps an event when both parties choose the same basis, so
/// `n_{X,k} = N q_x^2 p_k R_k`, `n_{Z,k} = N (1-q_x)^2 p_k R_k` and the error
/// counts replace `R_k` by `e_k`.
pub fn expected_counts_at(pt: &ProtocolPoint, pulses: f64) -> ObservedCounts {
    let mu = pt.intensities.mu();
    let p = pt.intensities.probabilities();
    let wx = pulses * pt.q_x * pt.q_x;
    let wz = pulses * (1.0 - pt.q_x) * (1.0 - pt.q_x);
    let mut c = ObservedCounts::default();
    for i in 0..3 {
        let (_, r) = detection_rates(mu[i], &pt.channel);
        let e = error_prob(mu[i], &pt.channel);
        c.n_x[i] = wx * p[i] * r;
        c.n_z[i] = wz * p[i] * r;
        c.m_x[i] = wx * p[i] * e;
        c.m_z[i] = wz * p[i] * e;
    }
    c
}

/// Expected counts and pulse number for the point's block size.
pub fn expected_statistics(pt: &ProtocolPoint) -> Result<ExpectedStatistics> {
    pt.validate()?;
    let mu = pt.intensities.mu();
    let p = pt.intensities.probabilities();
    let per_pulse: f64 = (0..3)
        .map(|i| p[i] * detection_rates(mu[i], &pt.channel).1)
        .sum::<f64>()
        * pt.q_x
        * pt.q_x;
    if !(per_pulse > 0.0) {
        return Err(Error::NoDetections);
    }
    let pulses = pt.n_x_target / per_pulse;
    let mut counts = expected_counts_at(pt, pulses);
    // Absorb rounding so the X total equals the block size exactly.
    let scale = pt.n_x_target / counts.n_x_total();
    counts.n_x = counts.n_x.map(|v| v * scale);
    Ok(ExpectedStatistics { counts, pulses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn point(length_km: f64) -> ProtocolPoint {
        ProtocolPoint {
            q_x: 0.8,
            intensities: IntensitySettings::new([0.5, 0.1, 2e-4], [0.65, 0.3, 0.05]).unwrap(),
            n_x_target: 1e7,
            channel: ChannelParams::reference(length_km),
            security: SecurityParams::reference(),
        }
    }

    #[test]
    fn transmittance_values() {
        assert_eq!(channel_transmittance(0.0, 0.2), 1.0);
        assert_relative_eq!(channel_transmittance(50.0, 0.2), 0.1, max_relative = 1e-15);
        assert_relative_eq!(channel_transmittance(100.0, 0.2), 0.01, max_relative = 1e-15);
    }

    #[test]
    fn vacuum_rates_reduce_to_dark_counts() {
        let ch = ChannelParams::reference(30.0);
        let (d, r) = detection_rates(0.0, &ch);
        assert_relative_eq!(d, 2.0 * ch.p_dc, max_relative = 1e-9);
        assert_relative_eq!(r, 2.0 * ch.p_dc * (1.0 + ch.p_ap), max_relative = 1e-9);
        assert_relative_eq!(error_prob(0.0, &ch), ch.p_dc * (1.0 + ch.p_ap), max_relative = 1e-9);
    }

    #[test]
    fn saturation_and_silence() {
        let mut ch = ChannelParams::reference(0.0);
        ch.p_dc = 0.0;
        ch.eta_bob = 1.0;
        assert!((detection_rates(1e3, &ch).0 - 1.0).abs() < 1e-15);
        ch.e_mis = 0.0;
        ch.p_ap = 0.0;
        assert_eq!(error_prob(0.7, &ch), 0.0);
    }

    #[test]
    fn golden_rates_at_100_km() {
        let ch = ChannelParams::reference(100.0);
        let (d, r) = detection_rates(0.5, &ch);
        assert_relative_eq!(d, 5.010_744_209_807_043e-4, max_relative = 1e-12);
        assert_relative_eq!(r, 5.211_173_978_199_325e-4, max_relative = 1e-12);
        assert_relative_eq!(error_prob(0.5, &ch), 1.312_086_352_376_773e-5, max_relative = 1e-12);
        let verbatim = ChannelParams {
            misalignment: MisalignmentModel::ChannelTransmittance,
            ..ch
        };
        assert_relative_eq!(
            error_prob(0.5, &verbatim),
            3.555_909_245_620_251e-5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn errors_never_exceed_detections() {
        for length in [0.0, 25.0, 50.0, 100.0, 150.0, 250.0] {
            for &k in &[0.0, 2e-4, 0.01, 0.1, 0.5, 1.0] {
                for model in [
                    MisalignmentModel::SystemTransmittance,
                    MisalignmentModel::ChannelTransmittance,
                ] {
                    let ch = ChannelParams {
                        misalignment: model,
                        ..ChannelParams::reference(length)
                    };
                    assert!(error_prob(k, &ch) <= detection_rates(k, &ch).1);
                }
            }
        }
    }

    #[test]
    fn rates_monotone_in_intensity() {
        let ch = ChannelParams::reference(40.0);
        let ks: [f64; 6] = [0.0, 1e-3, 0.05, 0.2, 0.6, 1.0];
        for w in ks.windows(2) {
            assert!(detection_rates(w[1], &ch).0 >= detection_rates(w[0], &ch).0);
            assert!(detection_rates(w[1], &ch).1 >= detection_rates(w[0], &ch).1);
            assert!(error_prob(w[1], &ch) >= error_prob(w[0], &ch));
        }
    }

    #[test]
    fn x_total_matches_block_size() {
        let stats = expected_statistics(&point(50.0)).unwrap();
        assert_relative_eq!(stats.counts.n_x_total(), 1e7, max_relative = 1e-15);
        assert!(stats.pulses > 1e7);
    }

    #[test]
    fn basis_independent_detection() {
        let pt = point(70.0);
        let c = expected_counts_at(&pt, 1e9);
        let (wx, wz) = (pt.q_x * pt.q_x, (1.0 - pt.q_x) * (1.0 - pt.q_x));
        for i in 0..3 {
            assert_relative_eq!(c.n_x[i] / wx, c.n_z[i] / wz, max_relative = 1e-14);
        }
    }

    #[test]
    fn q_x_near_one_starves_z() {
        let mut pt = point(10.0);
        pt.q_x = 1.0 - 1e-9;
        let stats = expected_statistics(&pt).unwrap();
        assert!(stats.counts.n_z.iter().all(|&v| v < 1e-3 * stats.counts.n_x_total()));
    }

    #[test]
    fn lossless_noiseless_limit() {
        let mut pt = point(0.0);
        pt.channel.eta_bob = 1.0;
        pt.channel.p_dc = 0.0;
        pt.channel.p_ap = 0.0;
        pt.channel.e_mis = 0.0;
        let c = expected_statistics(&pt).unwrap().counts;
        assert!(c.m_z.iter().all(|&v| v == 0.0));
        let mu = pt.intensities.mu();
        let p = pt.intensities.probabilities();
        let ratio = |i: usize| c.n_x[i] / (p[i] * (1.0 - (-mu[i]).exp()));
        assert_relative_eq!(ratio(0), ratio(1), max_relative = 1e-12);
        assert_relative_eq!(ratio(0), ratio(2), max_relative = 1e-9);
    }

    #[test]
    fn rejects_invalid_points() {
        let mut pt = point(10.0);
        pt.q_x = 1.0;
        assert!(expected_statistics(&pt).is_err());
        pt = point(10.0);
        pt.n_x_target = 0.0;
        assert!(expected_statistics(&pt).is_err());
        pt = point(-1.0);
        assert!(expected_statistics(&pt).is_err());
    }

    #[test]
    fn no_detections_is_reported() {
        let mut pt = point(10.0);
        pt.channel.eta_bob = 0.0;
        pt.channel.p_dc = 0.0;
        assert_eq!(expected_statistics(&pt), Err(Error::NoDetections));
    }
}
