//! File formats and the chronological train/test split.

pub mod incidents;
pub mod speed;

use crate::error::{Error, Result};
use crate::model::Incident;

pub use incidents::{load_incidents, write_incidents, IncidentLoad};
pub use speed::{load_sensor_meta, load_speed_csv, write_sensor_meta, write_speed_csv};

/// Sorts by first report time (ties by id) and puts the earliest
/// `floor(fraction * n)` incidents in the training set.
pub fn chronological_split(
    incidents: &[Incident],
    fraction: f64,
) -> Result<(Vec<Incident>, Vec<Incident>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let mut sorted = incidents.to_vec();
    sorted.sort_by(|a, b| {
        a.first_report_time
            .cmp(&b.first_report_time)
            .then_with(|| a.id.cmp(&b.id))
    });
    let n_train = (fraction * sorted.len() as f64 + 1e-9).floor() as usize;
    let test = sorted.split_off(n_train.min(sorted.len()));
    Ok((sorted, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;
    use chrono::{Duration, NaiveDate};

    fn incidents(n: usize) -> Vec<Incident> {
        let t0 = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        (0..n)
            .map(|i| Incident {
                id: format!("{:05}", (i * 7919) % n),
                first_report_time: t0 + Duration::minutes(((i * 37) % n) as i64 / 2 * 10),
                roadway_id: "I-5".into(),
                direction: Direction::North,
                milepost: 5.0,
                log_lines: vec![],
            })
            .collect()
    }

    #[test]
    fn counts() {
        let (train, test) = chronological_split(&incidents(10), 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train, test) = chronological_split(&incidents(2777), 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (2221, 556));
    }

    #[test]
    fn chronological_with_id_ties() {
        let (train, test) = chronological_split(&incidents(101), 0.8).unwrap();
        let last_train = train.last().unwrap();
        assert!(
            test.iter()
                .all(|t| (t.first_report_time, &t.id)
                    > (last_train.first_report_time, &last_train.id))
        );
        assert!(train
            .windows(2)
            .all(|w| (w[0].first_report_time, &w[0].id) <= (w[1].first_report_time, &w[1].id)));
        assert!(chronological_split(&incidents(3), 1.0).is_err());
    }
}
