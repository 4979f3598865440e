use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{predict_rows, ModelParams, Prediction};
use crate::scaling::MinMaxScaler;

/// Scales context and query with the context's min/max, then predicts each
/// query row against the context.
pub fn detect(context: &Matrix, query: &Matrix, params: &ModelParams<f32>, threshold: f64) -> Result<Prediction> {
    if context.cols() != query.cols() {
        return Err(Error::Dimension {
            op: "detect",
            lhs: vec![context.rows(), context.cols()],
            rhs: vec![query.rows(), query.cols()],
        });
    }
    let scaler = MinMaxScaler::fit(context);
    predict_rows(&scaler.transform(context), &scaler.transform(query), params, threshold)
}
