use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SegError;

/// User-picked intensity ranges. `b_object` may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub a_divider: f64,
    pub b_divider: f64,
    pub a_object: f64,
    /// Stored as `null` in JSON when unbounded.
    #[serde(serialize_with = "ser_upper", deserialize_with = "de_upper", default = "infinity")]
    pub b_object: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn ser_upper<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_none()
    } else {
        s.serialize_some(v)
    }
}

fn de_upper<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl ThresholdSet {
    pub fn new(a_divider: f64, b_divider: f64, a_object: f64, b_object: f64) -> Result<Self, SegError> {
        let t = Self { a_divider, b_divider, a_object, b_object };
        t.validate()?;
        Ok(t)
    }

    /// Divider range plus an unbounded object range starting at `b_divider`.
    pub fn from_divider_range(a_divider: f64, b_divider: f64) -> Result<Self, SegError> {
        Self::new(a_divider, b_divider, b_divider, f64::INFINITY)
    }

    pub fn validate(&self) -> Result<(), SegError> {
        let Self { a_divider, b_divider, a_object, b_object } = *self;
        if [a_divider, b_divider, a_object].iter().any(|v| !v.is_finite()) || b_object.is_nan() {
            return Err(SegError::InvalidThresholds("lower bounds must be finite".into()));
        }
        if a_divider < b_divider && b_divider <= a_object && a_object < b_object {
            Ok(())
        } else {
            Err(SegError::InvalidThresholds(format!(
                "need a_divider < b_divider <= a_object < b_object, got {a_divider}, {b_divider}, {a_object}, {b_object}"
            )))
        }
    }

    /// Every bound moved by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            a_divider: self.a_divider + c,
            b_divider: self.b_divider + c,
            a_object: self.a_object + c,
            b_object: self.b_object + c,
        }
    }

    pub fn is_divider(&self, v: f64) -> bool {
        self.a_divider <= v && v <= self.b_divider
    }

    pub fn is_object(&self, v: f64) -> bool {
        self.a_object <= v && v <= self.b_object
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_enforced() {
        assert!(ThresholdSet::new(1.0, 2.0, 2.0, f64::INFINITY).is_ok());
        assert!(ThresholdSet::new(2.0, 2.0, 3.0, 4.0).is_err());
        assert!(ThresholdSet::new(1.0, 3.0, 2.0, 4.0).is_err());
        assert!(ThresholdSet::new(1.0, 2.0, 3.0, 3.0).is_err());
        assert!(ThresholdSet::new(f64::NAN, 2.0, 3.0, 4.0).is_err());
    }

    #[test]
    fn unbounded_object_round_trips_as_null() {
        let t = ThresholdSet::from_divider_range(7000.0, 17000.0).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"b_object\":null"), "{json}");
        assert_eq!(serde_json::from_str::<ThresholdSet>(&json).unwrap(), t);
        let missing: ThresholdSet =
            serde_json::from_str(r#"{"a_divider":1,"b_divider":2,"a_object":2}"#).unwrap();
        assert!(missing.b_object.is_infinite());
    }
}
