/// (symbol, standard atomic weight) for Z = 1..=54.
const TABLE: [(&str, f64); 54] = [
    ("H", 1.008),
    ("He", 4.0026),
    ("Li", 6.94),
    ("Be", 9.0122),
    ("B", 10.81),
    ("C", 12.011),
    ("N", 14.007),
    ("O", 15.999),
    ("F", 18.998),
    ("Ne", 20.180),
    ("Na", 22.990),
    ("Mg", 24.305),
    ("Al", 26.982),
    ("Si", 28.085),
    ("P", 30.974),
    ("S", 32.06),
    ("Cl", 35.45),
    ("Ar", 39.948),
    ("K", 39.098),
    ("Ca", 40.078),
    ("Sc", 44.956),
    ("Ti", 47.867),
    ("V", 50.942),
    ("Cr", 51.996),
    ("Mn", 54.938),
    ("Fe", 55.845),
    ("Co", 58.933),
    ("Ni", 58.693),
    ("Cu", 63.546),
    ("Zn", 65.38),
    ("Ga", 69.723),
    ("Ge", 72.630),
    ("As", 74.922),
    ("Se", 78.971),
    ("Br", 79.904),
    ("Kr", 83.798),
    ("Rb", 85.468),
    ("Sr", 87.62),
    ("Y", 88.906),
    ("Zr", 91.224),
    ("Nb", 92.906),
    ("Mo", 95.95),
    ("Tc", 98.0),
    ("Ru", 101.07),
    ("Rh", 102.91),
    ("Pd", 106.42),
    ("Ag", 107.87),
    ("Cd", 112.41),
    ("In", 114.82),
    ("Sn", 118.71),
    ("Sb", 121.76),
    ("Te", 127.60),
    ("I", 126.90),
    ("Xe", 131.29),
];

pub fn atomic_number(symbol: &str) -> Option<u8> {
    TABLE.iter().position(|(s, _)| *s == symbol).map(|p| p as u8 + 1)
}

pub fn symbol(atomic_number: u8) -> Option<&'static str> {
    TABLE.get((atomic_number as usize).checked_sub(1)?).map(|(s, _)| *s)
}

pub fn atomic_mass(atomic_number: u8) -> Option<f64> {
    TABLE.get((atomic_number as usize).checked_sub(1)?).map(|(_, m)| *m)
}

/// Typical neutral valence used to infer implicit hydrogens when a file omits them.
pub fn default_valence(atomic_number: u8) -> Option<u32> {
    match atomic_number {
        1 => Some(1),
        5 => Some(3),
        6 | 14 => Some(4),
        7 | 15 | 33 => Some(3),
        8 | 16 | 34 => Some(2),
        9 | 17 | 35 | 53 => Some(1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups_agree() {
        assert_eq!(atomic_number("C"), Some(6));
        assert_eq!(atomic_number("Br"), Some(35));
        assert_eq!(symbol(17), Some("Cl"));
        assert_eq!(atomic_number("Xx"), None);
        assert_eq!(symbol(0), None);
        for z in 1..=54u8 {
            assert_eq!(atomic_number(symbol(z).unwrap()), Some(z));
        }
    }
}
