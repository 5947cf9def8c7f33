//! Deterministic low-discrepancy sampling used for equivalence checks and
//! multistart searches.

/// (i+1)-th element of the van der Corput sequence in the given prime base,
/// a value in (0, 1).
fn van_der_corput(mut index: usize, base: usize) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `count` Halton points scaled into the axis-aligned box given as one
/// (lo, hi) pair per coordinate. Deterministic: the same box and count
/// always yield the same points.
pub fn halton_points(domain: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    let dim = domain.len();
    (1..=count)
        .map(|k| {
            (0..dim)
                .map(|d| {
                    let u = if d < PRIMES.len() {
                        van_der_corput(k, PRIMES[d])
                    } else {
                        // Beyond the prime table, shift the index so the
                        // coordinates decorrelate.
                        van_der_corput(k + 7 * (d - PRIMES.len() + 1), PRIMES[d % PRIMES.len()])
                    };
                    let (lo, hi) = domain[d];
                    lo + u * (hi - lo)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_stay_in_the_box() {
        let domain = [(-2.0, 2.0), (0.0, 1.0), (-1.0, 3.0)];
        for p in halton_points(&domain, 500) {
            for (value, (lo, hi)) in p.iter().zip(&domain) {
                assert!(lo <= value && value <= hi);
            }
        }
    }

    #[test]
    fn sequence_is_deterministic() {
        let domain = [(-1.0, 1.0); 2];
        assert_eq!(halton_points(&domain, 10), halton_points(&domain, 10));
    }

    #[test]
    fn base_two_prefix_matches_van_der_corput() {
        let points = halton_points(&[(0.0, 1.0)], 4);
        let first: Vec<f64> = points.iter().map(|p| p[0]).collect();
        assert_eq!(first, vec![0.5, 0.25, 0.75, 0.125]);
    }
}
