use crate::cells::CellParams;

/// Anything exposing its trainable scalars as named flat blocks. Gradient
/// accumulators use the same type as the parameters they mirror, so block
/// names and lengths line up by construction.
pub trait ParamSet {
    fn blocks(&self) -> Vec<(String, &[f64])>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for (_, block) in self.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= factor);
        }
    }

    fn zero(&mut self) {
        for (_, block) in self.blocks_mut() {
            block.fill(0.0);
        }
    }
}

impl ParamSet for CellParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        CellParams::blocks(self)
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        CellParams::blocks_mut(self)
    }
}
