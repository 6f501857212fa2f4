//! Average lumped LuGre tire/pavement friction with a water-film lift model,
//! and the weather-to-friction pipeline that assigns one friction pair per
//! world.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{stream, Stream};

/// Lower bound applied to every assigned friction coefficient.
pub const MU_FLOOR: f64 = 1e-3;
/// Film thickness used to normalise the weather token, mm.
pub const H_NORM_MM: f64 = 1.0;

const STRIBECK_B: [f64; 4] = [4.8916, -7.91, 3.01, 3.40];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Surface {
    AC,
    SMA,
    OGFC,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::AC, Surface::SMA, Surface::OGFC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Surface::AC => "AC",
            Surface::SMA => "SMA",
            Surface::OGFC => "OGFC",
        }
    }

    pub fn preset(self) -> SurfacePreset {
        let (theta, td) = match self {
            Surface::AC => (1.00, 0.65),
            Surface::SMA => (1.09, 0.80),
            Surface::OGFC => (1.21, 1.08),
        };
        SurfacePreset {
            name: self,
            theta,
            texture_amplitude_td: td,
        }
    }

    pub fn theta(self) -> f64 {
        self.preset().theta
    }
}

impl std::str::FromStr for Surface {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AC" => Ok(Surface::AC),
            "SMA" => Ok(Surface::SMA),
            "OGFC" => Ok(Surface::OGFC),
            other => Err(SimError::Invalid(format!("unknown surface `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePreset {
    pub name: Surface,
    /// Texture influence coefficient.
    pub theta: f64,
    /// Mean texture amplitude, mm.
    pub texture_amplitude_td: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuGreParams {
    /// Bristle stiffness, 1/m.
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub mu_s_stribeck: f64,
    pub mu_c_stribeck: f64,
    pub alpha_stribeck: f64,
    /// Contact patch length, m.
    pub contact_length: f64,
}

impl Default for LuGreParams {
    fn default() -> Self {
        let mu_s = 1.25;
        LuGreParams {
            sigma0: 1000.0,
            sigma1: 0.0,
            sigma2: 0.0,
            mu_s_stribeck: mu_s,
            mu_c_stribeck: 0.5 * mu_s,
            alpha_stribeck: 0.5,
            contact_length: 0.15,
        }
    }
}

impl LuGreParams {
    /// Lumped-model shape constant `7 / (6 L)`.
    pub fn k(&self) -> f64 {
        7.0 / (6.0 * self.contact_length)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma0 > 0.0
            && self.mu_c_stribeck > 0.0
            && self.mu_s_stribeck >= self.mu_c_stribeck
            && self.contact_length > 0.0
            && self.alpha_stribeck > 0.0
            && self.sigma1 >= 0.0
            && self.sigma2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Invalid(format!("invalid LuGre parameters {self:?}")))
        }
    }
}

/// Stribeck speed for a water film of `h_w` meters.
pub fn stribeck_speed(h_w: f64) -> Result<f64> {
    if !(h_w >= 0.0) {
        return Err(SimError::Invalid(format!("water film thickness must be >= 0, got {h_w}")));
    }
    let [b1, b2, b3, b4] = STRIBECK_B;
    Ok(b1 * (1000.0 * b2 * h_w + b3).exp() + b4)
}

pub fn stribeck_g(v_r: f64, params: &LuGreParams, v_s: f64) -> f64 {
    let (mu_s, mu_c) = (params.mu_s_stribeck, params.mu_c_stribeck);
    mu_c + (mu_s - mu_c) * (-(v_r / v_s).abs().powf(params.alpha_stribeck)).exp()
}

/// Integration settings for the bristle ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BristleSettings {
    pub dt: f64,
    /// Tolerance on the remaining deflection, in units of `1/sigma0`.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for BristleSettings {
    fn default() -> Self {
        BristleSettings {
            dt: 1e-3,
            epsilon: 1e-7,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BristleState {
    pub z: f64,
    pub iterations: usize,
}

/// Closed-form steady state of the bristle ODE.
pub fn bristle_steady_state(v_r: f64, omega_r: f64, theta: f64, y_r: f64, params: &LuGreParams, v_s: f64) -> f64 {
    if v_r == 0.0 {
        return 0.0;
    }
    let g = stribeck_g(v_r, params, v_s);
    v_r / (theta * y_r * (params.sigma0 * v_r.abs() / g + params.k() * omega_r.abs()))
}

/// Integrate `dz/dt = v_r - theta*Y_R*(sigma0|v_r|/g + K|omega_r|) z` from
/// `z = 0` with the exponential integrator until the remaining deflection
/// falls below tolerance. `omega_r` is the tread rolling speed in m/s.
pub fn integrate_bristle(
    v_r: f64,
    omega_r: f64,
    theta: f64,
    y_r: f64,
    params: &LuGreParams,
    v_s: f64,
    settings: &BristleSettings,
) -> Result<BristleState> {
    if !(y_r > 0.0) {
        return Err(SimError::Invalid(format!("contact ratio must be positive, got {y_r}")));
    }
    if v_r == 0.0 {
        return Ok(BristleState { z: 0.0, iterations: 0 });
    }
    let g = stribeck_g(v_r, params, v_s);
    let lambda = theta * y_r * (params.sigma0 * v_r.abs() / g + params.k() * omega_r.abs());
    let z_star = v_r / lambda;
    let q = (-lambda * settings.dt).exp();
    let tol = settings.epsilon / params.sigma0;
    let mut z = 0.0;
    for it in 1..=settings.max_iterations {
        let next = z_star + (z - z_star) * q;
        let dz = (next - z).abs();
        z = next;
        // geometric tail of the remaining increments
        if dz * q / (1.0 - q) < tol {
            return Ok(BristleState { z, iterations: it });
        }
    }
    Err(SimError::NonConvergence {
        iterations: settings.max_iterations,
    })
}

/// Per-surface coefficients of the contact-length reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroCoeffs {
    /// Depth of the smooth contact-length reduction, in `[0, 1)`.
    pub a: f64,
    /// Film depth at half reduction, mm.
    pub c: f64,
}

/// Water-film lift model. With speed-scaled film `x = h * v / v_ref`:
///
/// `Y_R = (1 - a x^p / (x^p + c^p)) (1 - s(x))`, `Y_F = s(x)`, where `s` is a
/// logistic step centred at `h_cliff` rescaled so `s(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroLiftModel {
    pub p: f64,
    pub h_cliff: f64,
    pub cliff_width: f64,
    pub reference_speed: f64,
    pub surfaces: [HydroCoeffs; 3],
}

impl HydroLiftModel {
    fn scaled_film(&self, v: f64, h_mm: f64) -> f64 {
        h_mm.max(0.0) * v / self.reference_speed
    }

    fn cliff(&self, x: f64) -> f64 {
        let sig = |u: f64| 1.0 / (1.0 + (-u).exp());
        let s0 = sig(-self.h_cliff / self.cliff_width);
        ((sig((x - self.h_cliff) / self.cliff_width) - s0) / (1.0 - s0)).clamp(0.0, 1.0)
    }

    /// Contact patch length ratio.
    pub fn y_r(&self, surface: Surface, v: f64, h_mm: f64) -> f64 {
        let x = self.scaled_film(v, h_mm);
        let HydroCoeffs { a, c } = self.surfaces[surface.index()];
        let smooth = if x > 0.0 {
            let xp = x.powf(self.p);
            1.0 - a * xp / (xp + c.powf(self.p))
        } else {
            1.0
        };
        smooth * (1.0 - self.cliff(x))
    }

    /// Hydrodynamic force ratio.
    pub fn y_f(&self, _surface: Surface, v: f64, h_mm: f64) -> f64 {
        self.cliff(self.scaled_film(v, h_mm))
    }
}

/// Complete friction model: bristle parameters, lift model and the
/// evaluation conditions used for per-world assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionModel {
    pub lugre: LuGreParams,
    pub hydro: HydroLiftModel,
    pub wheel_radius: f64,
    pub reference_speed: f64,
    pub slip_static: f64,
    pub slip_dynamic: f64,
}

const BAKED_FIT: &str = include_str!("../data/friction_fit.json");

impl Default for FrictionModel {
    /// The calibrated model shipped with the crate.
    fn default() -> Self {
        serde_json::from_str(BAKED_FIT).expect("baked friction fit is valid")
    }
}

impl FrictionModel {
    /// Uncalibrated starting point for [`calibrate_hydro`].
    pub fn uncalibrated() -> Self {
        FrictionModel {
            lugre: LuGreParams::default(),
            hydro: HydroLiftModel {
                p: 2.0,
                h_cliff: 0.9,
                cliff_width: 0.015,
                reference_speed: 13.89,
                surfaces: [HydroCoeffs { a: 0.1, c: 0.45 }; 3],
            },
            wheel_radius: 0.35,
            reference_speed: 13.89,
            slip_static: 0.15,
            slip_dynamic: 0.80,
        }
    }

    fn slip_velocities(&self, v: f64, slip: f64) -> (f64, f64) {
        let v_r = slip * v;
        let wheel_omega = v * (1.0 - slip) / self.wheel_radius;
        (v_r, wheel_omega * self.wheel_radius)
    }

    /// Effective friction from numeric bristle integration.
    pub fn mu_effective(&self, surface: Surface, h_mm: f64, v: f64, slip: f64) -> Result<f64> {
        if !(v >= 0.0) || !(0.0..=1.0).contains(&slip) || !(h_mm >= 0.0) {
            return Err(SimError::Invalid(format!("mu_effective domain: h={h_mm} v={v} slip={slip}")));
        }
        let theta = surface.theta();
        let y_r = self.hydro.y_r(surface, v, h_mm);
        let y_f = self.hydro.y_f(surface, v, h_mm);
        let contact = (theta * y_r - y_f).max(0.0);
        let (v_r, omega_r) = self.slip_velocities(v, slip);
        if contact == 0.0 || y_r <= 0.0 || v_r == 0.0 {
            return Ok(0.0);
        }
        let v_s = stribeck_speed(h_mm * 1e-3)?;
        let z = integrate_bristle(v_r, omega_r, theta, y_r, &self.lugre, v_s, &BristleSettings::default())?.z;
        Ok(contact * theta * y_r * self.lugre.sigma0 * z)
    }

    /// Effective friction from the closed-form steady state. Smooth in the
    /// model coefficients, used by the calibration.
    pub fn mu_closed_form(&self, surface: Surface, h_mm: f64, v: f64, slip: f64) -> f64 {
        let theta = surface.theta();
        let y_r = self.hydro.y_r(surface, v, h_mm);
        let y_f = self.hydro.y_f(surface, v, h_mm);
        let contact = (theta * y_r - y_f).max(0.0);
        let (v_r, omega_r) = self.slip_velocities(v, slip);
        if contact == 0.0 || y_r <= 0.0 || v_r == 0.0 {
            return 0.0;
        }
        let v_s = STRIBECK_B[0] * (1000.0 * STRIBECK_B[1] * h_mm.max(0.0) * 1e-3 + STRIBECK_B[2]).exp() + STRIBECK_B[3];
        contact * theta * y_r * self.lugre.sigma0 * bristle_steady_state(v_r, omega_r, theta, y_r, &self.lugre, v_s)
    }

    pub fn assign(&self, surface: Surface, h_mm: f64) -> Result<FrictionAssignment> {
        let v = self.reference_speed;
        let mu_static = self.mu_effective(surface, h_mm, v, self.slip_static)?.max(MU_FLOOR);
        let mu_dynamic = self.mu_effective(surface, h_mm, v, self.slip_dynamic)?.max(MU_FLOOR);
        Ok(FrictionAssignment {
            surface,
            water_film_h: h_mm,
            mu_static,
            mu_dynamic,
            weather_token: weather_token(surface, h_mm),
        })
    }
}

pub fn weather_token(surface: Surface, h_mm: f64) -> [f64; 4] {
    let mut t = [h_mm / H_NORM_MM, 0.0, 0.0, 0.0];
    t[1 + surface.index()] = 1.0;
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionAssignment {
    pub surface: Surface,
    /// Water film thickness, mm.
    pub water_film_h: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
    pub weather_token: [f64; 4],
}

impl FrictionAssignment {
    pub fn dry(surface: Surface) -> Self {
        FrictionModel::default().assign(surface, 0.0).expect("dry assignment is in domain")
    }
}

/// Film depths of the reporting table, mm.
pub const TABLE_FILMS_MM: [f64; 5] = [0.0, 0.3, 0.5, 1.0, 2.0];

/// Static friction per surface at each table film depth.
pub fn friction_table(model: &FrictionModel) -> Result<Vec<(Surface, [f64; 5])>> {
    Surface::ALL
        .iter()
        .map(|&s| {
            let mut row = [0.0; 5];
            for (k, h) in TABLE_FILMS_MM.iter().enumerate() {
                row[k] = model.assign(s, *h)?.mu_static;
            }
            Ok((s, row))
        })
        .collect()
}

/// Assign with the shipped calibrated model.
pub fn assign_friction(surface: Surface, h_mm: f64) -> Result<FrictionAssignment> {
    FrictionModel::default().assign(surface, h_mm)
}

/// Ground material friction pair from surface and directional scales.
pub fn ground_material(f_surface: f64, f_lon: f64, f_lat: f64) -> (f64, f64) {
    let mu_s = (f_surface * (f_lon * f_lat).sqrt()).min(1.0);
    (mu_s, 0.95 * mu_s)
}

/// Contact friction seen by the tires: the smaller of wheel and ground values.
pub fn contact_mu(mu_wheel: f64, mu_ground: f64) -> f64 {
    mu_wheel.min(mu_ground)
}

/// Friction-curve anchors `(surface, h_mm, mu)` at the reference speed and
/// static slip, nine film depths per surface from 0.0 to 0.8 mm.
pub fn published_anchors() -> Vec<(Surface, f64, f64)> {
    const AC: [f64; 9] = [1.1048, 1.0657, 1.0161, 0.9593, 0.9039, 0.8595, 0.8302, 0.8134, 0.8044];
    const SMA: [f64; 9] = [1.2043, 1.1618, 1.1078, 1.0461, 0.9857, 0.9374, 0.9056, 0.8874, 0.8776];
    const OGFC: [f64; 9] = [1.3368, 1.2898, 1.2301, 1.1617, 1.0948, 1.0413, 1.0061, 0.9860, 0.9753];
    let mut out = Vec::with_capacity(27);
    for (s, row) in [(Surface::AC, AC), (Surface::SMA, SMA), (Surface::OGFC, OGFC)] {
        for (i, mu) in row.iter().enumerate() {
            out.push((s, i as f64 / 10.0, *mu));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub residuals: Vec<(Surface, f64, f64)>,
    pub max_residual: f64,
    pub evaluations: usize,
}

impl CalibrationReport {
    pub fn render(&self) -> String {
        self.residuals
            .iter()
            .map(|(s, h, r)| format!("{:>4} h={:.2} mm residual={:+.5}", s.name(), h, r))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

struct HydroFit<'a> {
    base: FrictionModel,
    anchors: &'a [(Surface, f64, f64)],
    params: DVector<f64>,
}

// parameter vector: [ln mu_s, ln p, logit a_AC..OGFC, ln c_AC..OGFC]
fn decode(base: &FrictionModel, q: &DVector<f64>) -> FrictionModel {
    let logistic = |u: f64| 1.0 / (1.0 + (-u).exp());
    let mut m = base.clone();
    let ratio = base.lugre.mu_c_stribeck / base.lugre.mu_s_stribeck;
    m.lugre.mu_s_stribeck = q[0].exp();
    m.lugre.mu_c_stribeck = ratio * m.lugre.mu_s_stribeck;
    m.hydro.p = q[1].exp();
    for s in 0..3 {
        m.hydro.surfaces[s] = HydroCoeffs {
            a: logistic(q[2 + s]),
            c: q[5 + s].exp(),
        };
    }
    m
}

fn encode(m: &FrictionModel) -> DVector<f64> {
    let logit = |a: f64| (a / (1.0 - a)).ln();
    let mut q = DVector::zeros(8);
    q[0] = m.lugre.mu_s_stribeck.ln();
    q[1] = m.hydro.p.ln();
    for s in 0..3 {
        q[2 + s] = logit(m.hydro.surfaces[s].a);
        q[5 + s] = m.hydro.surfaces[s].c.ln();
    }
    q
}

impl HydroFit<'_> {
    fn residual_at(&self, q: &DVector<f64>) -> DVector<f64> {
        let m = decode(&self.base, q);
        DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .iter()
                .map(|&(s, h, mu)| m.mu_closed_form(s, h, m.reference_speed, m.slip_static) - mu),
        )
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for HydroFit<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.params.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.residual_at(&self.params);
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.params.len();
        let mut jac = DMatrix::zeros(self.anchors.len(), n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + self.params[j].abs());
            let mut up = self.params.clone();
            let mut dn = self.params.clone();
            up[j] += h;
            dn[j] -= h;
            let col = (self.residual_at(&up) - self.residual_at(&dn)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac.iter().all(|v| v.is_finite()).then_some(jac)
    }
}

/// Least-squares fit of the Stribeck static level and the lift-model
/// coefficients to `(surface, h_mm, mu)` anchors at the reference speed and
/// static slip. Fails when any residual exceeds `tolerance`.
pub fn calibrate_hydro(
    anchors: &[(Surface, f64, f64)],
    start: &FrictionModel,
    tolerance: f64,
) -> Result<(FrictionModel, CalibrationReport)> {
    if anchors.len() < 8 {
        return Err(SimError::InsufficientSamples(format!("{} anchors for 8 coefficients", anchors.len())));
    }
    let problem = HydroFit {
        base: start.clone(),
        anchors,
        params: encode(start),
    };
    let (fitted, report) = LevenbergMarquardt::new().with_patience(400).minimize(problem);
    let model = decode(&fitted.base, &fitted.params);
    let residuals: Vec<(Surface, f64, f64)> = anchors
        .iter()
        .map(|&(s, h, mu)| {
            let got = model.mu_effective(s, h, model.reference_speed, model.slip_static).unwrap_or(f64::NAN);
            (s, h, got - mu)
        })
        .collect();
    let max_residual = residuals.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    let cal = CalibrationReport {
        residuals,
        max_residual,
        evaluations: report.number_of_evaluations,
    };
    if !(max_residual < tolerance) {
        return Err(SimError::FitResidual {
            max_residual,
            tolerance,
            report: cal.render(),
        });
    }
    Ok((model, cal))
}

/// Weather sampling knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeatherConfig {
    /// Probability of AC, SMA, OGFC.
    pub surface_probs: [f64; 3],
    /// Film thickness range for wet worlds, mm.
    pub film_range_mm: [f64; 2],
    pub wet_fraction: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            surface_probs: [1.0 / 3.0; 3],
            film_range_mm: [0.0, 0.8],
            wet_fraction: 0.5,
        }
    }
}

impl WeatherConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.surface_probs.iter().sum();
        if self.surface_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(SimError::Invalid(format!("surface probabilities must be >= 0 and sum to 1, got {:?}", self.surface_probs)));
        }
        let [lo, hi] = self.film_range_mm;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(SimError::Invalid(format!("film range must satisfy 0 <= lo <= hi, got {lo}..{hi}")));
        }
        if !(0.0..=1.0).contains(&self.wet_fraction) {
            return Err(SimError::Invalid(format!("wet fraction must be in [0, 1], got {}", self.wet_fraction)));
        }
        Ok(())
    }
}

/// Sample one friction assignment per world from the weather stream.
pub fn sample_weather(model: &FrictionModel, cfg: &WeatherConfig, num_worlds: usize, seed: u64) -> Result<Vec<FrictionAssignment>> {
    cfg.validate()?;
    let mut rng = stream(seed, Stream::Weather);
    (0..num_worlds)
        .map(|_| {
            let u: f64 = rng.gen();
            let surface = if u < cfg.surface_probs[0] {
                Surface::AC
            } else if u < cfg.surface_probs[0] + cfg.surface_probs[1] {
                Surface::SMA
            } else {
                Surface::OGFC
            };
            let wet = rng.gen::<f64>() < cfg.wet_fraction;
            let t: f64 = rng.gen();
            let h = if wet {
                cfg.film_range_mm[0] + t * (cfg.film_range_mm[1] - cfg.film_range_mm[0])
            } else {
                0.0
            };
            model.assign(surface, h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn stribeck_speed_values() {
        let dry = 4.8916 * 3.01f64.exp() + 3.40;
        assert_abs_diff_eq!(stribeck_speed(0.0).unwrap(), dry, epsilon = 1e-12);
        assert_abs_diff_eq!(stribeck_speed(0.0).unwrap(), 102.64, epsilon = 0.01);
        assert_abs_diff_eq!(stribeck_speed(0.001).unwrap(), 3.436, epsilon = 1e-3);
        assert!(stribeck_speed(0.0).unwrap() > stribeck_speed(0.0005).unwrap());
        assert!(stribeck_speed(-1e-6).is_err());
    }

    #[test]
    fn stribeck_g_limits() {
        let p = LuGreParams {
            alpha_stribeck: 1.0,
            ..LuGreParams::default()
        };
        assert_eq!(stribeck_g(0.0, &p, 10.0), p.mu_s_stribeck);
        assert_abs_diff_eq!(stribeck_g(1e6, &p, 10.0), p.mu_c_stribeck, epsilon = 1e-12);
        let expect = p.mu_c_stribeck + (p.mu_s_stribeck - p.mu_c_stribeck) / std::f64::consts::E;
        assert_abs_diff_eq!(stribeck_g(10.0, &p, 10.0), expect, epsilon = 1e-12);
    }

    #[test]
    fn bristle_matches_closed_form() {
        let p = LuGreParams::default();
        let s = BristleSettings::default();
        let num = integrate_bristle(2.0, 30.0, 1.09, 0.9, &p, 50.0, &s).unwrap();
        let exact = bristle_steady_state(2.0, 30.0, 1.09, 0.9, &p, 50.0);
        assert!((num.z - exact).abs() < 1e-6);
        assert_eq!(integrate_bristle(0.0, 30.0, 1.0, 1.0, &p, 50.0, &s).unwrap().z, 0.0);
    }

    #[test]
    fn bristle_stiffness_scaling() {
        let p = LuGreParams::default();
        let stiff = LuGreParams {
            sigma0: 2.0 * p.sigma0,
            ..p
        };
        let s = BristleSettings::default();
        // omega_r = 0 removes the rolling term entirely
        let a = integrate_bristle(3.0, 0.0, 1.0, 1.0, &p, 50.0, &s).unwrap().z;
        let b = integrate_bristle(3.0, 0.0, 1.0, 1.0, &stiff, 50.0, &s).unwrap().z;
        assert_abs_diff_eq!(b / a, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn bristle_non_convergence_reports() {
        let s = BristleSettings {
            max_iterations: 10,
            ..BristleSettings::default()
        };
        let err = integrate_bristle(1e-9, 0.0, 1.0, 1.0, &LuGreParams::default(), 50.0, &s).unwrap_err();
        assert!(matches!(err, SimError::NonConvergence { iterations: 10 }));
    }

    #[test]
    fn lift_boundary_conditions() {
        let m = FrictionModel::default();
        for s in Surface::ALL {
            assert_eq!(m.hydro.y_r(s, 13.89, 0.0), 1.0);
            assert_eq!(m.hydro.y_f(s, 13.89, 0.0), 0.0);
        }
    }

    #[test]
    fn ground_material_values() {
        assert_eq!(ground_material(1.0, 1.0, 1.0), (1.0, 0.95));
        assert_eq!(ground_material(2.0, 1.0, 1.0), (1.0, 0.95));
        let (s, d) = ground_material(1.0, 0.81, 1.0);
        assert_abs_diff_eq!(s, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(d, 0.855, epsilon = 1e-12);
    }

    #[test]
    fn token_layout() {
        assert_eq!(weather_token(Surface::AC, 0.5), [0.5, 1.0, 0.0, 0.0]);
        assert_eq!(weather_token(Surface::OGFC, 0.0), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn weather_sampling_deterministic() {
        let m = FrictionModel::default();
        let cfg = WeatherConfig::default();
        let a = sample_weather(&m, &cfg, 16, 7).unwrap();
        let b = sample_weather(&m, &cfg, 16, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.mu_static >= MU_FLOOR && f.water_film_h <= 0.8));
    }
}
