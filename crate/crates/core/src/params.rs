//! Named parameter sets and their binding onto a tape.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Records parameters onto a tape under dotted names.
pub struct Binder<'t> {
    tape: &'t Tape,
    prefix: Vec<String>,
    bound: Vec<(String, Var<'t>)>,
    supplied: Option<std::vec::IntoIter<Var<'t>>>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Self {
            tape,
            prefix: Vec::new(),
            bound: Vec::new(),
            supplied: None,
        }
    }

    /// Binds onto existing leaves instead of creating new ones; `vars` must
    /// follow [`Params::visit`] order.
    pub fn replay(tape: &'t Tape, vars: &[Var<'t>]) -> Self {
        Self {
            supplied: Some(vars.to_vec().into_iter()),
            ..Self::new(tape)
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn param(&mut self, name: &str, value: &Tensor) -> Var<'t> {
        let v = match self.supplied.as_mut() {
            Some(it) => it.next().expect("replay binder ran out of supplied vars"),
            None => self.tape.leaf(value.clone()),
        };
        let full = self.full_name(name);
        self.bound.push((full, v));
        v
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.to_string());
        let r = f(self);
        self.prefix.pop();
        r
    }

    pub fn bound(&self) -> &[(String, Var<'t>)] {
        &self.bound
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn collect(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(n, v)| (n.clone(), grads.wrt(*v)))
            .collect()
    }
}

/// A set of named tensors that can be bound onto a tape.
pub trait Params {
    type Vars<'t>;

    fn bind<'t>(&self, b: &mut Binder<'t>) -> Self::Vars<'t>;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Overwrites every tensor from `values`; fails on a missing name or a
    /// shape mismatch.
    fn load_named(&mut self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |n, t| {
            if err.is_some() {
                return;
            }
            match values.get(n) {
                None => err = Some(Error::InvalidArgument(format!("parameter {n} missing"))),
                Some(v) if v.shape() != t.shape() => {
                    err = Some(Error::ShapeMismatch {
                        what: format!("parameter {n}"),
                        expected: t.shape().to_vec(),
                        found: v.shape().to_vec(),
                    })
                }
                Some(v) => *t = v.clone(),
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Params`] for a struct whose listed fields are all `Tensor`s,
/// generating a matching struct of `Var`s.
macro_rules! tensor_params {
    ($ty:ident => $vars:ident { $($field:ident),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug)]
        pub struct $vars<'t> {
            $(pub $field: $crate::autodiff::Var<'t>,)+
        }

        impl $crate::params::Params for $ty {
            type Vars<'t> = $vars<'t>;

            fn bind<'t>(&self, b: &mut $crate::params::Binder<'t>) -> $vars<'t> {
                $vars { $($field: b.param(stringify!($field), &self.$field),)+ }
            }

            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::tensor::Tensor)) {
                $(f(&$crate::params::join_name(prefix, stringify!($field)), &self.$field);)+
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::tensor::Tensor),
            ) {
                $(f(&$crate::params::join_name(prefix, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

pub(crate) use tensor_params;
