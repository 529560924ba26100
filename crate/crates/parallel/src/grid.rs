use serde::{Deserialize, Serialize};

/// Mesh axes of the 4D-parallel layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshAxis {
    Tp,
    Cp,
    Pp,
    Dp,
}

/// Device mesh extents; total devices = tp * cp * pp * dp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGrid {
    pub tp: usize,
    pub cp: usize,
    pub pp: usize,
    pub dp: usize,
}

impl DeviceGrid {
    pub fn new(tp: usize, cp: usize, pp: usize, dp: usize) -> Self {
        Self { tp, cp, pp, dp }
    }

    pub fn serial() -> Self {
        Self { tp: 1, cp: 1, pp: 1, dp: 1 }
    }

    pub fn device_count(&self) -> usize {
        self.tp * self.cp * self.pp * self.dp
    }

    pub fn axis_size(&self, axis: MeshAxis) -> usize {
        match axis {
            MeshAxis::Tp => self.tp,
            MeshAxis::Cp => self.cp,
            MeshAxis::Pp => self.pp,
            MeshAxis::Dp => self.dp,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.tp >= 1 && self.cp >= 1 && self.pp >= 1 && self.dp >= 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_count_is_product() {
        let g = DeviceGrid::new(2, 4, 2, 3);
        assert_eq!(g.device_count(), 48);
        assert_eq!(g.axis_size(MeshAxis::Cp), 4);
    }

    #[test]
    fn grid_serializes_compactly() {
        let g = DeviceGrid::new(1, 2, 1, 1);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"tp":1,"cp":2,"pp":1,"dp":1}"#);
    }
}
