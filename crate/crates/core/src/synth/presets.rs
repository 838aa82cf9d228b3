//! Named example locations, six urban and six rural.

use crate::synth::map::Environment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub name: &'static str,
    pub lon: f64,
    pub lat: f64,
    pub environment: Environment,
    /// Multiplier on the environment's tile density.
    pub density_scale: f64,
}

const fn loc(name: &'static str, lon: f64, lat: f64, environment: Environment, density_scale: f64) -> Location {
    Location { name, lon, lat, environment, density_scale }
}

pub const LOCATIONS: [Location; 12] = [
    loc("Dresden, Germany", 13.75, 51.05, Environment::Urban, 1.18),
    loc("Boston, USA", -71.11, 42.35, Environment::Urban, 1.30),
    loc("New Delhi, India", 77.10, 28.70, Environment::Urban, 0.94),
    loc("Moscow, Russia", 37.62, 55.76, Environment::Urban, 1.06),
    loc("Denver, USA", -105.14, 39.76, Environment::Urban, 0.70),
    loc("Bangalore, India", 77.35, 12.95, Environment::Urban, 0.82),
    loc("Rural Chad", 13.18, 13.23, Environment::Rural, 0.82),
    loc("Rural Niger", 9.53, 18.86, Environment::Rural, 0.70),
    loc("Rural India", 77.77, 23.82, Environment::Rural, 1.30),
    loc("Rural Wyoming", -105.78, 43.25, Environment::Rural, 0.94),
    loc("Rural Montana", -109.72, 48.39, Environment::Rural, 1.06),
    loc("Rural Russia", 104.15, 66.53, Environment::Rural, 1.18),
];

/// Steps per route profile.
pub const ROUTE_STEPS: usize = 16;

/// Walsh rows used for the six routes; mutually orthogonal over 16 steps.
const ROUTE_ROWS: [usize; 6] = [3, 5, 6, 9, 10, 12];

/// Speed multipliers `1 ± amp` following Walsh row `k`.
pub fn walsh_profile(k: usize, len: usize, amp: f64) -> Vec<f64> {
    (0..len).map(|i| if (i & k).count_ones().is_multiple_of(2) { 1.0 + amp } else { 1.0 - amp }).collect()
}

/// Speed profiles of six routes. The last route drives the first
/// `shared` steps of the first one before turning off.
pub fn route_profiles(shared: usize, amp: f64) -> Vec<Vec<f64>> {
    let mut routes: Vec<Vec<f64>> = ROUTE_ROWS.iter().map(|&k| walsh_profile(k, ROUTE_STEPS, amp)).collect();
    let n = shared.min(ROUTE_STEPS);
    let head = routes[0][..n].to_vec();
    routes[5][..n].copy_from_slice(&head);
    routes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - 1.0) * (y - 1.0)).sum()
    }

    #[test]
    fn routes_are_orthogonal_except_the_shared_pair() {
        let r = route_profiles(12, 0.5);
        for i in 0..6 {
            assert_eq!(r[i].len(), ROUTE_STEPS);
            for j in 0..i {
                let d = centered_dot(&r[i], &r[j]);
                if (i, j) == (5, 0) {
                    assert!(d > 1.0, "{d}");
                } else if i < 5 {
                    assert_eq!(d, 0.0, "{i} {j}");
                }
            }
        }
        assert_eq!(r[5][..12], r[0][..12]);
        assert_ne!(r[5][12..], r[0][12..]);
    }

    #[test]
    fn six_of_each() {
        let urban = LOCATIONS.iter().filter(|l| l.environment == Environment::Urban).count();
        assert_eq!(urban, 6);
        assert_eq!(LOCATIONS.len() - urban, 6);
    }
}
