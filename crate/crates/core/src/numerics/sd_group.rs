use num_rational::Ratio;

use crate::error::{Error, Result};

/// A `K`-digit signed-digit group with at most one nonzero digit.
///
/// The value is therefore `0` or `±2^j` with `0 <= j < K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SdGroup {
    digits: u32,
    value: i32,
}

pub const MAX_SD_DIGITS: u32 = 8;

impl SdGroup {
    pub fn new(digits: u32, value: i32) -> Result<Self> {
        check_digits(digits)?;
        let mag = value.unsigned_abs();
        if mag != 0 && (!mag.is_power_of_two() || mag.trailing_zeros() >= digits) {
            return Err(Error::invalid(format!(
                "{value} is not a legal {digits}-digit SD group value"
            )));
        }
        Ok(Self { digits, value })
    }

    pub fn digit_count(&self) -> u32 {
        self.digits
    }

    pub fn value(&self) -> i32 {
        self.value
    }

    /// Digits from most to least significant, each in `{-1, 0, 1}`.
    pub fn digits(&self) -> Vec<i8> {
        let pos = (self.value != 0).then(|| self.value.unsigned_abs().trailing_zeros());
        (0..self.digits)
            .rev()
            .map(|j| match pos {
                Some(p) if p == j => self.value.signum() as i8,
                _ => 0,
            })
            .collect()
    }

    /// Table-style rendering: `1` / `0`, with `-1` shown as `1̲`.
    pub fn render(&self) -> String {
        self.digits()
            .into_iter()
            .map(|d| match d {
                1 => "1".to_string(),
                -1 => "1\u{0332}".to_string(),
                _ => "0".to_string(),
            })
            .collect()
    }
}

fn check_digits(k: u32) -> Result<()> {
    if (1..=MAX_SD_DIGITS).contains(&k) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "SD group digit count must be in 1..={MAX_SD_DIGITS}, got {k}"
        )))
    }
}

/// All `2K + 1` legal values of a `K`-digit group, ascending.
pub fn sd_group_values(k: u32) -> Result<Vec<i32>> {
    check_digits(k)?;
    let mut values: Vec<i32> = (0..k).flat_map(|j| [1 << j, -(1 << j)]).collect();
    values.push(0);
    values.sort_unstable();
    Ok(values)
}

/// Probability that a digit of a `K`-digit group is zero when the group
/// values are equiprobable: `(2K - 1) / (2K + 1)`.
///
/// # Panics
///
/// If `k` is zero.
pub fn zero_digit_probability(k: u32) -> Ratio<u64> {
    assert!(k >= 1, "SD group needs at least one digit");
    let k = u64::from(k);
    Ratio::new(2 * k - 1, 2 * k + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_digit_group_matches_table() {
        assert_eq!(sd_group_values(3).unwrap(), vec![-4, -2, -1, 0, 1, 2, 4]);
        let rendered: Vec<String> = [4, 2, 1, 0, -1, -2, -4]
            .iter()
            .map(|&v| SdGroup::new(3, v).unwrap().render())
            .collect();
        assert_eq!(
            rendered,
            ["100", "010", "001", "000", "001\u{0332}", "01\u{0332}0", "1\u{0332}00"]
        );
    }

    #[test]
    fn small_groups() {
        assert_eq!(sd_group_values(1).unwrap(), vec![-1, 0, 1]);
        assert_eq!(sd_group_values(2).unwrap(), vec![-2, -1, 0, 1, 2]);
    }

    #[test]
    fn digit_count_out_of_range() {
        assert!(matches!(sd_group_values(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(sd_group_values(9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_illegal_values() {
        assert!(SdGroup::new(3, 3).is_err());
        assert!(SdGroup::new(3, 8).is_err());
        assert!(SdGroup::new(2, -4).is_err());
        assert!(SdGroup::new(2, -2).is_ok());
    }

    #[test]
    fn zero_probability_closed_form() {
        assert_eq!(zero_digit_probability(3), Ratio::new(5, 7));
        assert_eq!(zero_digit_probability(1), Ratio::new(1, 3));
        assert_eq!(zero_digit_probability(2), Ratio::new(3, 5));
        let pct = *zero_digit_probability(3).numer() as f64 / *zero_digit_probability(3).denom() as f64;
        assert!((pct * 100.0 - 71.4).abs() < 0.05);
    }

    // Counts zero digits over every legal group value, independent of the
    // closed form.
    #[test]
    fn zero_probability_matches_enumeration() {
        for k in 1..=MAX_SD_DIGITS {
            let values = sd_group_values(k).unwrap();
            assert_eq!(values.len(), 2 * k as usize + 1);
            let zeros: usize = values
                .iter()
                .map(|&v| {
                    let g = SdGroup::new(k, v).unwrap();
                    assert!(g.digits().iter().filter(|&&d| d != 0).count() <= 1);
                    g.digits().iter().filter(|&&d| d == 0).count()
                })
                .sum();
            let slots = values.len() * k as usize;
            assert_eq!(
                Ratio::new(zeros as u64, slots as u64),
                zero_digit_probability(k),
                "K={k}"
            );
            if k == 2 {
                assert_eq!((zeros, slots), (6, 10));
            }
        }
    }
}
