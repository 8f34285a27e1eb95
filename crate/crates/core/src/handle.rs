//! Stateful handle with the `make / step / observe / close` call shape used
//! by foreign-language bindings.

use crate::env::{Env, EnvConfig, EnvState, Obs, StepOutput};
use crate::error::{Error, Result};
use crate::scalar::Real;

struct Open<T> {
    env: Env<T>,
    state: EnvState<T>,
    out: StepOutput<T>,
}

pub struct EnvHandle<T> {
    inner: Option<Open<T>>,
}

impl<T: Real> EnvHandle<T> {
    /// Builds the env and renders the initial observation.
    pub fn make(config: &EnvConfig) -> Result<Self> {
        let env = Env::new(config)?;
        let state = env.initial_state(config.seed)?;
        let mut out = env.new_output();
        env.observe_into(&state, &mut out);
        Ok(EnvHandle { inner: Some(Open { env, state, out }) })
    }

    fn open(&self) -> Result<&Open<T>> {
        self.inner.as_ref().ok_or_else(|| Error::invalid("handle is closed"))
    }

    pub fn env(&self) -> Result<&Env<T>> {
        Ok(&self.open()?.env)
    }

    pub fn step(&mut self, actions: &[T]) -> Result<&StepOutput<T>> {
        let o = self.inner.as_mut().ok_or_else(|| Error::invalid("handle is closed"))?;
        o.env.step_into(&mut o.state, actions, &mut o.out)?;
        Ok(&o.out)
    }

    /// Latest observation, without advancing.
    pub fn observe(&self) -> Result<&Obs> {
        Ok(&self.open()?.out.obs)
    }

    pub fn is_closed(&self) -> bool {
        self.inner.is_none()
    }

    /// Releases the env; later calls fail. Closing twice is a no-op.
    pub fn close(&mut self) {
        self.inner = None;
    }
}
