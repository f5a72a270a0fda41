use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// How period labels are written. Plain integers (including bare years) are their own ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Index,
    Month,
    Day,
}

impl Granularity {
    /// Classify a label by shape: `YYYY-MM-DD`, `YYYY-MM`, otherwise an integer.
    pub fn detect(label: &str) -> Granularity {
        let label = label.trim();
        let bytes = label.as_bytes();
        let digits = |r: std::ops::Range<usize>| bytes[r].iter().all(u8::is_ascii_digit);
        if bytes.len() == 10 && bytes[4] == b'-' && bytes[7] == b'-' && digits(0..4) {
            Granularity::Day
        } else if bytes.len() == 7 && bytes[4] == b'-' && digits(0..4) && digits(5..7) {
            Granularity::Month
        } else {
            Granularity::Index
        }
    }

    /// Ordinal of a label; consecutive periods have consecutive ordinals.
    pub fn ordinal(self, label: &str) -> Option<i64> {
        let label = label.trim();
        match self {
            Granularity::Index => label.parse().ok(),
            Granularity::Month => {
                let (y, m) = label.split_once('-')?;
                let (y, m): (i64, i64) = (y.parse().ok()?, m.parse().ok()?);
                (1..=12).contains(&m).then_some(y * 12 + m - 1)
            }
            Granularity::Day => {
                let d = NaiveDate::parse_from_str(label, "%Y-%m-%d").ok()?;
                Some(d.num_days_from_ce() as i64)
            }
        }
    }

    pub fn label(self, ordinal: i64) -> String {
        match self {
            Granularity::Index => ordinal.to_string(),
            Granularity::Month => format!("{:04}-{:02}", ordinal.div_euclid(12), ordinal.rem_euclid(12) + 1),
            Granularity::Day => NaiveDate::from_num_days_from_ce_opt(ordinal as i32)
                .map(|d| d.format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| ordinal.to_string()),
        }
    }
}

/// Mapping between period labels and 0-based panel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodAxis {
    pub granularity: Granularity,
    /// Ordinal of index 0.
    pub start: i64,
}

impl PeriodAxis {
    pub fn new(granularity: Granularity, start: i64) -> Self {
        Self { granularity, start }
    }

    /// Integer axis starting at 0.
    pub fn indices() -> Self {
        Self::new(Granularity::Index, 0)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let ord = self.granularity.ordinal(label)?;
        usize::try_from(ord - self.start).ok()
    }

    pub fn label(&self, index: usize) -> String {
        self.granularity.label(self.start + index as i64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monthly_axis_maps_1998_to_96() {
        let axis = PeriodAxis::new(Granularity::Month, Granularity::Month.ordinal("1990-01").unwrap());
        assert_eq!(axis.index_of("1998-01"), Some(96));
        assert_eq!(axis.label(119), "1999-12");
        assert_eq!(axis.index_of("1989-12"), None);
    }

    #[test]
    fn detection() {
        assert_eq!(Granularity::detect("1998-01"), Granularity::Month);
        assert_eq!(Granularity::detect("1998-01-31"), Granularity::Day);
        assert_eq!(Granularity::detect("1998"), Granularity::Index);
        assert_eq!(Granularity::detect("17"), Granularity::Index);
        assert_eq!(Granularity::Month.ordinal("1998-13"), None);
    }

    proptest! {
        #[test]
        fn labels_round_trip(g in prop_oneof![Just(Granularity::Index), Just(Granularity::Month), Just(Granularity::Day)],
                             ord in 1000i64..100_000, k in 0usize..500) {
            let axis = PeriodAxis::new(g, ord);
            let label = axis.label(k);
            prop_assert_eq!(Granularity::detect(&label) == g || g == Granularity::Index, true);
            prop_assert_eq!(axis.index_of(&label), Some(k));
            // order preserving
            prop_assert!(g.ordinal(&axis.label(k + 1)).unwrap() > g.ordinal(&label).unwrap());
        }
    }
}
