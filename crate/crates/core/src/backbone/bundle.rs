use crate::error::{Error, Result};
use crate::grid::{apply_mask, rotate_resample, ComplexGrid, RealGrid};
use crate::scalar::Real;

/// Complex feature maps grouped by rotation order.
///
/// Orders form an increasing run of consecutive integers that contains 0;
/// every order holds at least one channel and all grids share one size.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBundle<T: Real> {
    orders: Vec<i32>,
    streams: Vec<Vec<ComplexGrid<T>>>,
}

pub(crate) fn check_orders(orders: &[i32]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::Wiring("at least one rotation order is required".into()));
    }
    if orders.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Wiring(format!(
            "orders must be consecutive and increasing, got {orders:?}"
        )));
    }
    if !orders.contains(&0) {
        return Err(Error::Wiring(format!("orders {orders:?} do not contain 0")));
    }
    Ok(())
}

impl<T: Real> StreamBundle<T> {
    pub fn new(orders: Vec<i32>, streams: Vec<Vec<ComplexGrid<T>>>) -> Result<Self> {
        check_orders(&orders)?;
        if orders.len() != streams.len() {
            return Err(Error::Wiring(format!(
                "{} orders but {} streams",
                orders.len(),
                streams.len()
            )));
        }
        if streams.iter().any(Vec::is_empty) {
            return Err(Error::Wiring("every order needs at least one channel".into()));
        }
        let dims = streams[0][0].dims();
        if streams.iter().flatten().any(|g| g.dims() != dims) {
            return Err(Error::Shape("all grids in a bundle must share one size".into()));
        }
        Ok(Self { orders, streams })
    }

    pub(crate) fn from_parts(orders: Vec<i32>, streams: Vec<Vec<ComplexGrid<T>>>) -> Self {
        debug_assert!(Self::new(orders.clone(), streams.clone()).is_ok());
        Self { orders, streams }
    }

    /// Single order-0 channel holding a real image.
    pub fn from_real(image: &RealGrid<T>) -> Self {
        Self {
            orders: vec![0],
            streams: vec![vec![image.to_complex()]],
        }
    }

    pub fn zeros(orders: &[i32], channels: &[usize], height: usize, width: usize) -> Result<Self> {
        if channels.len() != orders.len() {
            return Err(Error::Wiring("one channel count per order expected".into()));
        }
        let streams = channels
            .iter()
            .map(|&c| (0..c).map(|_| ComplexGrid::zeros(height, width)).collect())
            .collect();
        Self::new(orders.to_vec(), streams)
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        let (h, w) = self.dims();
        Self {
            orders: self.orders.clone(),
            streams: self
                .streams
                .iter()
                .map(|s| s.iter().map(|_| ComplexGrid::zeros(h, w)).collect())
                .collect(),
        }
    }

    pub fn orders(&self) -> &[i32] {
        &self.orders
    }

    pub fn streams(&self) -> &[Vec<ComplexGrid<T>>] {
        &self.streams
    }

    pub(crate) fn streams_mut(&mut self) -> &mut [Vec<ComplexGrid<T>>] {
        &mut self.streams
    }

    pub fn order_index(&self, order: i32) -> Option<usize> {
        self.orders.iter().position(|&m| m == order)
    }

    pub fn stream(&self, order: i32) -> Option<&[ComplexGrid<T>]> {
        self.order_index(order).map(|i| self.streams[i].as_slice())
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.streams.iter().map(Vec::len).collect()
    }

    pub fn total_channels(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.streams[0][0].dims()
    }

    /// Channels in (order, channel) enumeration order.
    pub fn channels(&self) -> impl Iterator<Item = &ComplexGrid<T>> {
        self.streams.iter().flatten()
    }

    pub(crate) fn channels_mut(&mut self) -> impl Iterator<Item = &mut ComplexGrid<T>> {
        self.streams.iter_mut().flatten()
    }

    pub fn map_channels(&self, f: impl Fn(&ComplexGrid<T>) -> ComplexGrid<T>) -> Self {
        Self::from_parts(
            self.orders.clone(),
            self.streams.iter().map(|s| s.iter().map(&f).collect()).collect(),
        )
    }

    pub fn rotate(&self, theta: T) -> Self {
        self.map_channels(|g| rotate_resample(g, theta))
    }

    pub fn apply_mask(&self, mask: &RealGrid<T>) -> Result<Self> {
        let streams = self
            .streams
            .iter()
            .map(|s| s.iter().map(|g| apply_mask(g, mask)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(self.orders.clone(), streams))
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.orders == other.orders
            && self.channel_counts() == other.channel_counts()
            && self.dims() == other.dims()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert!(self.same_layout(other), "bundle layouts differ");
        self.channels()
            .zip(other.channels())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> StreamBundle<U> {
        StreamBundle {
            orders: self.orders.clone(),
            streams: self
                .streams
                .iter()
                .map(|s| s.iter().map(|g| g.cast()).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::scalar::Complex;

    fn grid(h: usize, w: usize, v: f64) -> ComplexGrid<f64> {
        Grid::from_fn(h, w, |_, _| Complex::new(v, 0.0))
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(matches!(
            StreamBundle::new(vec![1, 2], vec![vec![grid(2, 2, 0.0)], vec![grid(2, 2, 0.0)]]),
            Err(Error::Wiring(_))
        ));
        assert!(matches!(
            StreamBundle::new(vec![0, 2], vec![vec![grid(2, 2, 0.0)], vec![grid(2, 2, 0.0)]]),
            Err(Error::Wiring(_))
        ));
        assert!(matches!(
            StreamBundle::new(vec![0, 1], vec![vec![grid(2, 2, 0.0)], vec![grid(3, 2, 0.0)]]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            StreamBundle::new(vec![0, 1], vec![vec![grid(2, 2, 0.0)], vec![]]),
            Err(Error::Wiring(_))
        ));
        assert!(StreamBundle::new(vec![-1, 0, 1], vec![vec![grid(2, 2, 0.0)]; 3]).is_ok());
    }

    #[test]
    fn enumeration_is_order_major() {
        let b = StreamBundle::new(
            vec![0, 1],
            vec![vec![grid(1, 1, 0.0), grid(1, 1, 1.0)], vec![grid(1, 1, 2.0)]],
        )
        .unwrap();
        let values: Vec<f64> = b.channels().map(|g| g.get(0, 0).re).collect();
        assert_eq!(values, vec![0.0, 1.0, 2.0]);
        assert_eq!(b.channel_counts(), vec![2, 1]);
        assert_eq!(b.stream(1).unwrap().len(), 1);
        assert!(b.stream(2).is_none());
    }
}
