//! Smoothing filter, PI / lag controller with a frozen-output deadband, and
//! the scalar deadband map.

/// Integrator leak of the lag approximant.
pub const LAG_LEAK: f64 = 0.99;

/// Two-tap moving average of the aggregate output plus network losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    /// Aggregate output at the previous step, MW.
    pub prev_p: f64,
}

impl FilterState {
    /// Start the filter from the aggregate output at k = 0.
    pub fn new(p0: f64) -> Self {
        FilterState { prev_p: p0 }
    }

    /// p̂ = (p + p_prev) / 2 + losses.
    pub fn step(&mut self, p: f64, losses: f64) -> f64 {
        let p_hat = (p + self.prev_p) / 2.0 + losses;
        self.prev_p = p;
        p_hat
    }
}

/// Tracking error e = r − p̂.
pub fn tracking_error(reference: f64, p_hat: f64) -> f64 {
    reference - p_hat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Pi,
    Lag,
}

impl ControllerKind {
    pub fn leak(self) -> f64 {
        match self {
            ControllerKind::Pi => 1.0,
            ControllerKind::Lag => LAG_LEAK,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Pi => "pi",
            ControllerKind::Lag => "lag",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub kind: ControllerKind,
    pub kp: f64,
    pub ki: f64,
    /// Integrator state x_c.
    pub x_c: f64,
    /// Last emitted signal π.
    pub last_pi: f64,
    /// Deadband half-width δ ≥ 0, MW.
    pub deadband: f64,
}

impl ControllerState {
    pub fn new(kind: ControllerKind, kp: f64, ki: f64, x_c: f64, deadband: f64) -> Self {
        assert!(deadband >= 0.0, "deadband must be non-negative");
        ControllerState {
            kind,
            kp,
            ki,
            x_c,
            last_pi: 0.0,
            deadband,
        }
    }

    pub fn leak(&self) -> f64 {
        self.kind.leak()
    }

    /// Advance one step on error `e`. Returns the emitted signal and whether
    /// the controller updated (`false` means the deadband froze it).
    ///
    /// Outside the band (`|e| ≥ δ`) the integrator becomes `leak·x_c + e` and
    /// `π = K_p·e + K_i·(leak·x_c + e)`. Inside the band both π and x_c keep
    /// their previous values.
    pub fn step(&mut self, e: f64) -> (f64, bool) {
        if e.abs() < self.deadband {
            return (self.last_pi, false);
        }
        let x_next = self.leak() * self.x_c + e;
        let pi = self.kp * e + self.ki * x_next;
        self.x_c = x_next;
        self.last_pi = pi;
        (pi, true)
    }
}

/// Deadband map: `x` if `|x| ≥ δ`, otherwise 0.
pub fn deadband_phi(x: f64, delta: f64) -> f64 {
    if x.abs() >= delta {
        x
    } else {
        0.0
    }
}
