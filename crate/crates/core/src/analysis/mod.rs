//! Exact parameter and MAC accounting, shape tracing and the closed-form
//! complexity expressions.

mod closed_form;
mod count;

pub use closed_form::{gpm_closed_form, wmhsa_closed_form};
pub use count::{
    complexity, conv_macs, count_macs, count_params, shape_trace, ComplexityReport, FlopConvention, LayerRow, ShapeTrace,
    StageEstimate, TraceRow,
};
