//! The closed vocabulary of directed relation labels.
//!
//! Ids are stable: they are the discriminants below, `0..RelationType::COUNT`,
//! and they are what the binary matrix format and the embedding tables index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! relations {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u16)]
        pub enum RelationType {
            $($variant),+
        }

        impl RelationType {
            pub const ALL: &'static [RelationType] = &[$(RelationType::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(RelationType::$variant => $name),+
                }
            }
        }
    };
}

relations! {
    QqDistMinus2 => "Question-Question-Dist-2",
    QqDistMinus1 => "Question-Question-Dist-1",
    QqDistPlus1 => "Question-Question-Dist1",
    QqDistPlus2 => "Question-Question-Dist2",
    QqIdentity => "Question-Question-Identity",
    QqGeneric => "Question-Question-Generic",
    ForwardSyntax => "Forward-Syntax",
    BackwardSyntax => "Backward-Syntax",
    NoneSyntax => "None-Syntax",
    CoRelations => "Co_Relations",
    CorefRelations => "Coref_Relations",
    QuestionStarGeneric => "Question-*-Generic",
    QtExactMatch => "Question-Table-Exactmatch",
    QtPartialMatch => "Question-Table-Partialmatch",
    QtNoMatch => "Question-Table-Nomatch",
    QcExactMatch => "Question-Column-Exactmatch",
    QcPartialMatch => "Question-Column-Partialmatch",
    QcNoMatch => "Question-Column-Nomatch",
    QcValueMatch => "Question-Column-Valuematch",
    StarQuestionGeneric => "*-Question-Generic",
    StarStarIdentity => "*-*-Identity",
    StarTableGeneric => "*-Table-Generic",
    StarColumnGeneric => "*-Column-Generic",
    TqExactMatch => "Table-Question-Exactmatch",
    TqPartialMatch => "Table-Question-Partialmatch",
    TqNoMatch => "Table-Question-Nomatch",
    TableStarGeneric => "Table-*-Generic",
    TtGeneric => "Table-Table-Generic",
    TtIdentity => "Table-Table-Identity",
    TtFk => "Table-Table-Fk",
    TtFkr => "Table-Table-Fkr",
    TtFkb => "Table-Table-Fkb",
    TcPk => "Table-Column-Pk",
    TcHas => "Table-Column-Has",
    TcGeneric => "Table-Column-Generic",
    CqExactMatch => "Column-Question-Exactmatch",
    CqPartialMatch => "Column-Question-Partialmatch",
    CqNoMatch => "Column-Question-Nomatch",
    CqValueMatch => "Column-Question-Valuematch",
    ColumnStarGeneric => "Column-*-Generic",
    CtPk => "Column-Table-Pk",
    CtHas => "Column-Table-Has",
    CtGeneric => "Column-Table-Generic",
    CcIdentity => "Column-Column-Identity",
    CcSameTable => "Column-Column-Sametable",
    CcFk => "Column-Column-Fk",
    CcFkr => "Column-Column-Fkr",
    CcGeneric => "Column-Column-Generic",
    HasDbContent => "Has-Dbcontent",
    HasDbContentR => "Has-Dbcontent-R",
    NoRelation => "No-Relation",
}

impl RelationType {
    pub const COUNT: usize = 51;

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<RelationType> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn from_name(name: &str) -> Option<RelationType> {
        Self::ALL.iter().copied().find(|r| r.name() == name)
    }

    /// Placeholder labels for pairs without a specific edge.
    pub fn is_generic(self) -> bool {
        use RelationType::*;
        matches!(
            self,
            QqGeneric
                | QuestionStarGeneric
                | StarQuestionGeneric
                | StarTableGeneric
                | StarColumnGeneric
                | TableStarGeneric
                | TtGeneric
                | TcGeneric
                | ColumnStarGeneric
                | CtGeneric
                | CcGeneric
        )
    }

    /// Question-question distance label for `tail - head`, when |d| ≤ 2.
    pub fn distance(d: isize) -> Option<RelationType> {
        match d {
            -2 => Some(RelationType::QqDistMinus2),
            -1 => Some(RelationType::QqDistMinus1),
            1 => Some(RelationType::QqDistPlus1),
            2 => Some(RelationType::QqDistPlus2),
            _ => None,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownRelation(pub String);

impl fmt::Display for UnknownRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown relation `{}`", self.0)
    }
}

impl std::error::Error for UnknownRelation {}

impl FromStr for RelationType {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationType::from_name(s).ok_or_else(|| UnknownRelation(s.to_string()))
    }
}

impl Serialize for RelationType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for RelationType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}
