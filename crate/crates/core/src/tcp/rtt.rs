/// Smoothed RTT and mean-deviation estimator working in whole ticks of the
/// retransmission clock. State is kept in eighths of a tick so the 1/8 and
/// 1/4 gains stay in integer arithmetic.
#[derive(Clone, Debug)]
pub struct RttEstimator {
    srtt_8: Option<u64>,
    rttvar_8: u64,
    base_rto: u32,
    backoff: u32,
    max_rto: u32,
}

impl RttEstimator {
    pub fn new(initial_rto_ticks: u32, max_rto_ticks: u32) -> Self {
        RttEstimator {
            srtt_8: None,
            rttvar_8: 0,
            base_rto: initial_rto_ticks.clamp(1, max_rto_ticks),
            backoff: 0,
            max_rto: max_rto_ticks,
        }
    }

    /// Smoothed RTT in ticks, if any sample has been taken.
    pub fn srtt(&self) -> Option<f64> {
        self.srtt_8.map(|s| s as f64 / 8.0)
    }

    pub fn rttvar(&self) -> f64 {
        self.rttvar_8 as f64 / 8.0
    }

    /// Current timeout in ticks, including any backoff.
    pub fn rto(&self) -> u32 {
        let shifted = (self.base_rto as u64) << self.backoff.min(31);
        shifted.min(self.max_rto as u64) as u32
    }

    /// Folds in an RTT sample and clears any timeout backoff.
    pub fn sample(&mut self, ticks: u64) {
        let s8 = ticks * 8;
        match self.srtt_8 {
            None => {
                self.srtt_8 = Some(s8);
                self.rttvar_8 = s8 / 2;
            }
            Some(srtt) => {
                let err = s8 as i64 - srtt as i64;
                let srtt = (srtt as i64 + err / 8).max(0) as u64;
                let var = self.rttvar_8 as i64;
                self.rttvar_8 = (var + (err.abs() - var) / 4).max(0) as u64;
                self.srtt_8 = Some(srtt);
            }
        }
        let srtt = self.srtt_8.unwrap_or(0);
        let rto = (srtt + 4 * self.rttvar_8).div_ceil(8);
        self.base_rto = rto.clamp(1, self.max_rto as u64) as u32;
        self.backoff = 0;
    }

    /// Doubles the timeout, saturating at the maximum.
    pub fn back_off(&mut self) {
        if self.rto() < self.max_rto {
            self.backoff += 1;
        }
    }
}
