// SPDX-License-Identifier: Apache-2.0

//! Staff capability matrix.
//!
//! | level     | view | filter | download | add | edit/delete | send sms | manage staff | settings |
//! |-----------|------|--------|----------|-----|-------------|----------|--------------|----------|
//! | read only |  y   |   y    |    y     |  -  |      -      |    -     |      -       |    -     |
//! | add       |  y   |   y    |    y     |  y  |      -      |    -     |      -       |    -     |
//! | edit      |  y   |   y    |    y     |  y  |      y      |    -     |      -       |    -     |
//! | send      |  y   |   y    |    y     |  y  |      y      |    y     |      -       |    -     |
//! | superuser |  y   |   y    |    y     |  y  |      y      |    y     |      y       |    y     |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AccessLevel, StaffAccount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    View,
    Filter,
    Download,
    Add,
    EditDelete,
    SendSms,
    ManageStaff,
    UpdateSettings,
}

impl Capability {
    pub const ALL: [Capability; 8] = [
        Capability::View,
        Capability::Filter,
        Capability::Download,
        Capability::Add,
        Capability::EditDelete,
        Capability::SendSms,
        Capability::ManageStaff,
        Capability::UpdateSettings,
    ];

    /// Weakest access level holding this capability.
    pub fn minimum_level(self) -> AccessLevel {
        match self {
            Capability::View | Capability::Filter | Capability::Download => AccessLevel::ReadOnly,
            Capability::Add => AccessLevel::Add,
            Capability::EditDelete => AccessLevel::Edit,
            Capability::SendSms => AccessLevel::Send,
            Capability::ManageStaff | Capability::UpdateSettings => AccessLevel::Superuser,
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Capability::View => "view",
            Capability::Filter => "filter",
            Capability::Download => "download",
            Capability::Add => "add",
            Capability::EditDelete => "edit_delete",
            Capability::SendSms => "send_sms",
            Capability::ManageStaff => "manage_staff",
            Capability::UpdateSettings => "update_settings",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allowed(self) -> bool {
        self == Decision::Allow
    }
}

pub fn allowed(level: AccessLevel, capability: Capability) -> bool {
    level >= capability.minimum_level()
}

/// Disabled accounts are denied everything.
pub fn authorize(staff: &StaffAccount, capability: Capability) -> Decision {
    if staff.active && allowed(staff.access_level, capability) {
        Decision::Allow
    } else {
        Decision::Deny
    }
}
