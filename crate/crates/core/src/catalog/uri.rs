use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `s3://<bucket>/<key>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectUri {
    bucket: String,
    key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid object uri `{0}`: expected s3://<bucket>/<key>")]
pub struct InvalidUri(pub String);

fn valid_bucket(b: &str) -> bool {
    !b.is_empty()
        && b.len() <= 63
        && b
            .bytes()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'-' || c == b'.' || c == b'_')
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && !k.starts_with('/')
        && !k.ends_with('/')
        && k.split('/').all(|seg| !seg.is_empty() && seg != "." && seg != "..")
        && !k.chars().any(|c| c.is_control())
}

impl ObjectUri {
    pub fn new(bucket: &str, key: &str) -> Result<Self, InvalidUri> {
        if valid_bucket(bucket) && valid_key(key) {
            Ok(ObjectUri {
                bucket: bucket.to_owned(),
                key: key.to_owned(),
            })
        } else {
            Err(InvalidUri(format!("s3://{bucket}/{key}")))
        }
    }

    pub fn parse(s: &str) -> Result<Self, InvalidUri> {
        let rest = s.strip_prefix("s3://").ok_or_else(|| InvalidUri(s.to_owned()))?;
        let (bucket, key) = rest.split_once('/').ok_or_else(|| InvalidUri(s.to_owned()))?;
        Self::new(bucket, key).map_err(|_| InvalidUri(s.to_owned()))
    }

    pub fn bucket(&self) -> &str {
        &self.bucket
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    /// Last path segment of the key; the name a staged input gets in a sandbox.
    pub fn basename(&self) -> &str {
        self.key.rsplit('/').next().unwrap_or(&self.key)
    }

    /// Policy target naming the whole bucket.
    pub fn bucket_target(&self) -> String {
        bucket_target(&self.bucket)
    }
}

pub fn bucket_target(bucket: &str) -> String {
    format!("s3://{bucket}")
}

impl fmt::Display for ObjectUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s3://{}/{}", self.bucket, self.key)
    }
}

impl FromStr for ObjectUri {
    type Err = InvalidUri;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for ObjectUri {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObjectUri {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ObjectUri::parse(&s).map_err(serde::de::Error::custom)
    }
}
