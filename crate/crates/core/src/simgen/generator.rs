use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Weekday};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::records::{Gender, TreatmentRecord};

/// Service-time model and volume of one treatment task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProfile {
    pub task_id: String,
    pub department: String,
    pub doctors: Vec<String>,
    pub windows: u32,
    /// Mean service time of a male adult aged 20–40.
    pub base_service_s: f64,
    /// Added per year below age 20.
    pub child_slope_s: f64,
    /// Added per year above age 40.
    pub age_slope_s: f64,
    /// Added for female patients.
    pub gender_offset_s: f64,
    /// Log-scale spread of one patient's service time around its mean.
    pub service_sigma: f64,
    /// Share of history rows replaced by extreme values.
    pub noise_fraction: f64,
    /// History rows on a weekday before weekend damping.
    pub daily_volume: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProfile {
    pub hourly_weights: [f64; 24],
    /// Multiplier on Saturday and Sunday volume.
    pub weekend_damping: f64,
}

impl Default for ArrivalProfile {
    fn default() -> Self {
        let mut w = [0.0; 24];
        let hours: [(usize, f64); 12] = [
            (7, 0.4),
            (8, 1.8),
            (9, 2.3),
            (10, 2.1),
            (11, 1.5),
            (12, 0.6),
            (13, 0.8),
            (14, 1.6),
            (15, 1.9),
            (16, 1.7),
            (17, 1.1),
            (18, 0.3),
        ];
        for (h, v) in hours {
            w[h] = v;
        }
        ArrivalProfile {
            hourly_weights: w,
            weekend_damping: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub days: u32,
    pub start_date: NaiveDate,
    /// Tasks in the order a patient would list them.
    pub tasks: Vec<TaskProfile>,
    pub arrivals: ArrivalProfile,
}

/// Noisy rows are scaled by a factor drawn from one of these ranges, each
/// with probability one half.
pub const NOISE_LOW: (f64, f64) = (0.05, 0.25);
pub const NOISE_HIGH: (f64, f64) = (3.0, 10.0);

/// Share of patients per age band `[lo, hi]`.
const AGE_BANDS: [(u32, u32, f64); 3] = [(0, 19, 0.10), (20, 59, 0.70), (60, 95, 0.20)];

fn profile(
    task_id: &str,
    department: &str,
    doctors: &[&str],
    windows: u32,
    base_service_s: f64,
    daily_volume: u32,
) -> TaskProfile {
    // Age and gender effects scale with the task's base time, shaped after CT:
    // roughly 21 s/yr below 20, 10.8 s/yr above 40 and +6% for women.
    let scale = base_service_s / 245.0;
    TaskProfile {
        task_id: task_id.into(),
        department: department.into(),
        doctors: doctors.iter().map(|d| d.to_string()).collect(),
        windows,
        base_service_s,
        child_slope_s: 21.0 * scale,
        age_slope_s: 10.8 * scale,
        gender_offset_s: 15.0 * scale,
        service_sigma: 0.12,
        noise_fraction: 0.05,
        daily_volume,
    }
}

impl GeneratorConfig {
    /// A six-task outpatient hospital with a few windows per task, sized for
    /// about 1000 patients over a working week.
    pub fn hospital(seed: u64, days: u32) -> Self {
        GeneratorConfig {
            seed,
            days,
            start_date: NaiveDate::from_ymd_opt(2015, 10, 5).expect("valid date"),
            tasks: vec![
                profile("checkup", "internal_medicine", &["dr_chen", "dr_li", "dr_wang"], 4, 240.0, 200),
                profile("blood_test", "laboratory", &["lab_1", "lab_2"], 2, 100.0, 200),
                profile("CT", "radiology", &["dr_zhao", "dr_liu"], 4, 245.0, 200),
                profile("MR", "radiology", &["dr_sun"], 5, 330.0, 200),
                profile("pharmacy", "pharmacy", &["ph_1", "ph_2"], 1, 70.0, 200),
                profile("payment", "finance", &["cashier"], 1, 50.0, 200),
            ],
            arrivals: ArrivalProfile::default(),
        }
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskProfile> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = &self.arrivals.hourly_weights;
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err("hourly weights must be non-negative with a positive sum".into());
        }
        if !(0.0..=1.0).contains(&self.arrivals.weekend_damping) {
            return Err("weekend_damping must lie in [0, 1]".into());
        }
        for t in &self.tasks {
            if !(0.0..=0.5).contains(&t.noise_fraction) {
                return Err(format!("{}: noise_fraction must lie in [0, 0.5]", t.task_id));
            }
            if t.windows == 0 {
                return Err(format!("{}: windows must be positive", t.task_id));
            }
            if !(t.base_service_s > 0.0 && t.service_sigma >= 0.0) {
                return Err(format!("{}: service parameters must be positive", t.task_id));
            }
        }
        Ok(())
    }
}

/// Mean service time for one patient and doctor slot.
pub fn expected_service_s(profile: &TaskProfile, gender: Gender, age: u32, doctor: usize) -> f64 {
    let age = age as f64;
    let mut mean = profile.base_service_s
        + profile.child_slope_s * (20.0 - age).max(0.0)
        + profile.age_slope_s * (age - 40.0).max(0.0);
    if gender == Gender::Female {
        mean += profile.gender_offset_s;
    }
    mean * doctor_factor(doctor, profile.doctors.len())
}

/// Doctors spread ±6% around the task mean, averaging to one.
fn doctor_factor(doctor: usize, n: usize) -> f64 {
    if n < 2 {
        1.0
    } else {
        1.0 + 0.12 * (doctor as f64 / (n - 1) as f64 - 0.5)
    }
}

/// One log-normal draw with the given mean, rounded to whole seconds.
pub fn draw_service_s<R: Rng>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    let value = if sigma == 0.0 {
        mean
    } else {
        let mu = mean.ln() - sigma * sigma / 2.0;
        LogNormal::new(mu, sigma).expect("finite parameters").sample(rng)
    };
    value.round().max(1.0)
}

pub fn draw_patient<R: Rng>(rng: &mut R) -> (Gender, u32) {
    let gender = if rng.random_bool(0.5) {
        Gender::Male
    } else {
        Gender::Female
    };
    let band = WeightedIndex::new(AGE_BANDS.iter().map(|b| b.2))
        .expect("positive weights")
        .sample(rng);
    let (lo, hi, _) = AGE_BANDS[band];
    (gender, rng.random_range(lo..=hi))
}

/// Seconds after midnight, drawn from the hourly profile.
pub fn draw_time_of_day<R: Rng>(rng: &mut R, hours: &WeightedIndex<f64>) -> i64 {
    let hour = hours.sample(rng) as i64;
    hour * 3600 + rng.random_range(0..3600)
}

pub(crate) fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Synthetic treatment history, sorted by start time then task order.
///
/// # Panics
/// If the config fails [`GeneratorConfig::validate`].
pub fn generate_history(config: &GeneratorConfig) -> Vec<TreatmentRecord> {
    if let Err(e) = config.validate() {
        panic!("invalid generator config: {e}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hours = WeightedIndex::new(config.arrivals.hourly_weights).expect("validated weights");
    let mut out: Vec<(NaiveDateTime, usize, TreatmentRecord)> = Vec::new();
    let mut card = 0u64;
    for day in 0..config.days {
        let date = config.start_date + Duration::days(day as i64);
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
        let damping = if is_weekend(date) {
            config.arrivals.weekend_damping
        } else {
            1.0
        };
        for (task_index, task) in config.tasks.iter().enumerate() {
            let volume = (task.daily_volume as f64 * damping).round() as u32;
            for _ in 0..volume {
                card += 1;
                let (gender, age) = draw_patient(&mut rng);
                let start = midnight + Duration::seconds(draw_time_of_day(&mut rng, &hours));
                let doctor = if task.doctors.is_empty() {
                    0
                } else {
                    rng.random_range(0..task.doctors.len())
                };
                let mean = expected_service_s(task, gender, age, doctor);
                let mut duration = draw_service_s(&mut rng, mean, task.service_sigma);
                if rng.random_bool(task.noise_fraction) {
                    let (lo, hi) = if rng.random_bool(0.5) { NOISE_LOW } else { NOISE_HIGH };
                    duration = (duration * rng.random_range(lo..hi)).round().max(1.0);
                }
                let record = TreatmentRecord {
                    patient_card_no: format!("P{card:07}"),
                    gender,
                    age,
                    department: task.department.clone(),
                    doctor: task.doctors.get(doctor).cloned(),
                    task: task.task_id.clone(),
                    start_time: start,
                    end_time: Some(start + Duration::seconds(duration as i64)),
                    week_day: date.weekday(),
                    hour_of_day: (start - midnight).num_hours() as u32,
                    duration_s: duration,
                };
                out.push((start, task_index, record));
            }
        }
    }
    out.sort_by_key(|a| (a.0, a.1));
    out.into_iter().map(|(_, _, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ct_only(noise: f64, days: u32) -> GeneratorConfig {
        let mut g = GeneratorConfig::hospital(11, days);
        g.tasks.retain(|t| t.task_id == "CT");
        g.tasks[0].noise_fraction = noise;
        g
    }

    fn mean(v: impl Iterator<Item = f64>) -> f64 {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    }

    #[test]
    fn zero_days_is_empty() {
        assert!(generate_history(&GeneratorConfig::hospital(1, 0)).is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let g = GeneratorConfig::hospital(5, 2);
        assert_eq!(generate_history(&g), generate_history(&g));
        let other = GeneratorConfig::hospital(6, 2);
        assert_ne!(generate_history(&g), generate_history(&other));
    }

    #[test]
    fn ct_calibration() {
        let h = generate_history(&ct_only(0.0, 40));
        let adult = mean(h.iter().filter(|r| (20..=40).contains(&r.age)).map(|r| r.duration_s));
        assert!((adult - 245.0).abs() <= 0.15 * 245.0, "adult mean {adult}");
        let task = &ct_only(0.0, 1).tasks[0];
        let old_male = expected_service_s(task, Gender::Male, 90, 0) / doctor_factor(0, 2);
        assert!((old_male - 786.0).abs() <= 0.2 * 786.0, "age 90 mean {old_male}");
        let teen = expected_service_s(task, Gender::Male, 15, 0) / doctor_factor(0, 2);
        assert!((340.0..=370.0).contains(&teen), "age 15 mean {teen}");
        let by_gender = |g: Gender| mean(h.iter().filter(|r| r.gender == g).map(|r| r.duration_s));
        assert!(by_gender(Gender::Female) > by_gender(Gender::Male));
    }

    #[test]
    fn old_male_sample_mean() {
        let task = &ct_only(0.0, 1).tasks[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = mean((0..4000).map(|i| {
            let mean = expected_service_s(task, Gender::Male, 90, i % 2);
            draw_service_s(&mut rng, mean, task.service_sigma)
        }));
        assert!((m - 786.0).abs() <= 0.2 * 786.0, "{m}");
    }

    #[test]
    fn arrivals_have_two_peaks_and_quiet_weekends() {
        let h = generate_history(&ct_only(0.0, 7));
        let mut per_hour = [0usize; 24];
        for r in &h {
            per_hour[r.hour_of_day as usize] += 1;
        }
        let morning = per_hour[8..=11].iter().sum::<usize>();
        let afternoon = per_hour[14..=17].iter().sum::<usize>();
        assert!(morning > 4 * per_hour[12] && afternoon > 4 * per_hour[12]);
        assert_eq!(per_hour[3], 0);
        let weekday = h.iter().filter(|r| r.week_day == Weekday::Mon).count();
        let saturday = h.iter().filter(|r| r.week_day == Weekday::Sat).count();
        assert_eq!(weekday, 200);
        assert_eq!(saturday, 80);
    }

    #[test]
    fn noise_rows_are_extreme() {
        let clean = generate_history(&ct_only(0.0, 10));
        let noisy = generate_history(&ct_only(0.3, 10));
        let far = |h: &[TreatmentRecord]| {
            h.iter()
                .filter(|r| {
                    let m = expected_service_s(&ct_only(0.0, 1).tasks[0], r.gender, r.age, 0);
                    r.duration_s > 2.5 * m || r.duration_s < 0.3 * m
                })
                .count() as f64
                / h.len() as f64
        };
        assert!(far(&clean) < 0.01);
        assert!((far(&noisy) - 0.3).abs() < 0.05, "{}", far(&noisy));
    }

    #[test]
    fn marginal_tail_comes_from_age_mix() {
        // Per-patient spread is narrow; the long right tail of a task's
        // durations comes from elderly and very young patients.
        let h = generate_history(&ct_only(0.0, 60));
        let mut d: Vec<f64> = h.iter().map(|r| r.duration_s).collect();
        d.sort_by(f64::total_cmp);
        let p99 = d[(d.len() * 99) / 100];
        let ratio = p99 / mean(d.iter().copied());
        assert!((1.8..=2.6).contains(&ratio), "P99/mean = {ratio}");
    }

    #[test]
    fn validation() {
        let mut g = GeneratorConfig::hospital(1, 1);
        assert!(g.validate().is_ok());
        g.tasks[0].noise_fraction = 0.6;
        assert!(g.validate().is_err());
        let mut g = GeneratorConfig::hospital(1, 1);
        g.arrivals.hourly_weights[3] = -1.0;
        assert!(g.validate().is_err());
    }
}
