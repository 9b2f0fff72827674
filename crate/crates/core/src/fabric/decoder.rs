use super::FabricError;
use serde::{Deserialize, Serialize};

/// Slave selected by the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Slave(usize),
    /// Built-in default slave: ERROR for active transfers, OKAY for IDLE.
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub base: u32,
    pub size: u32,
    pub slave: usize,
}

impl Region {
    fn end(&self) -> u64 {
        self.base as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr as u64) < self.end()
    }
}

/// Static address map. Unmapped addresses go to the default slave.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderMap {
    regions: Vec<Region>,
}

impl DecoderMap {
    pub fn new(regions: Vec<Region>, slave_count: usize) -> Result<Self, FabricError> {
        for (i, r) in regions.iter().enumerate() {
            if !r.size.is_power_of_two() {
                return Err(FabricError::RegionSize(i, r.size));
            }
            if r.base % r.size != 0 {
                return Err(FabricError::RegionAlignment(i, r.base));
            }
            if r.slave >= slave_count {
                return Err(FabricError::UnknownSlave { region: i, slave: r.slave, count: slave_count });
            }
            for (j, other) in regions.iter().enumerate().take(i) {
                if (r.base as u64) < other.end() && (other.base as u64) < r.end() {
                    return Err(FabricError::OverlappingRegions(j, i));
                }
            }
        }
        Ok(DecoderMap { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }
}

pub fn decode(map: &DecoderMap, addr: u32) -> Target {
    map.regions
        .iter()
        .find(|r| r.contains(addr))
        .map_or(Target::Default, |r| Target::Slave(r.slave))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_ranges() -> DecoderMap {
        DecoderMap::new(
            vec![
                Region { base: 0x0000, size: 0x100, slave: 0 },
                Region { base: 0x0200, size: 0x100, slave: 1 },
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn containing_range_wins() {
        let map = DecoderMap::new(vec![Region { base: 0, size: 64 * 1024, slave: 0 }], 1).unwrap();
        assert_eq!(decode(&map, 0x0000_0100), Target::Slave(0));
        assert_eq!(decode(&map, 0xFFFF_0000), Target::Default);
    }

    #[test]
    fn boundaries_brute_force() {
        let map = two_ranges();
        for addr in 0u32..0x400 {
            let expect = if addr < 0x100 {
                Target::Slave(0)
            } else if (0x200..0x300).contains(&addr) {
                Target::Slave(1)
            } else {
                Target::Default
            };
            assert_eq!(decode(&map, addr), expect, "addr {addr:#x}");
        }
        // base + size never maps to the lower range
        assert_eq!(decode(&map, 0x100), Target::Default);
        assert_eq!(decode(&map, 0x300), Target::Default);
    }

    #[test]
    fn top_of_address_space() {
        let map = DecoderMap::new(vec![Region { base: 0xF000_0000, size: 0x1000_0000, slave: 0 }], 1).unwrap();
        assert_eq!(decode(&map, u32::MAX), Target::Slave(0));
    }

    #[test]
    fn rejects_bad_maps() {
        assert!(matches!(
            DecoderMap::new(vec![Region { base: 0, size: 0x300, slave: 0 }], 1),
            Err(FabricError::RegionSize(0, 0x300))
        ));
        assert!(matches!(
            DecoderMap::new(
                vec![Region { base: 0, size: 0x200, slave: 0 }, Region { base: 0x100, size: 0x100, slave: 0 }],
                1
            ),
            Err(FabricError::OverlappingRegions(0, 1))
        ));
        assert!(matches!(
            DecoderMap::new(vec![Region { base: 0x80, size: 0x100, slave: 0 }], 1),
            Err(FabricError::RegionAlignment(0, 0x80))
        ));
        assert!(matches!(
            DecoderMap::new(vec![Region { base: 0, size: 0x100, slave: 3 }], 1),
            Err(FabricError::UnknownSlave { .. })
        ));
    }
}
