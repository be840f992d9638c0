//! Point-to-point links in three security modes, handshakes, sessions and
//! static client tokens.
//!
//! A secured session hides message content behind a per-session key that
//! only the two endpoints know. Attacker hooks on the wire are driven by
//! [`crate::flows::World`], which owns every session of a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Fresh, Term};
use crate::model::{ActorId, Link, LinkId, Topology};

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    #[default]
    Network,
    /// Local radio hop (card or phone to charge point); never encrypted.
    Nfc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    Plain,
    ServerAuth,
    MutualAuth,
}

impl LinkMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkMode::Plain => "plain",
            LinkMode::ServerAuth => "server_auth",
            LinkMode::MutualAuth => "mutual_auth",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientAuthMethod {
    None,
    /// Shared static secret sent with every request (OCPI token, OCPP password).
    StaticToken,
    /// TLS client certificate; only with [`LinkMode::MutualAuth`].
    ClientCertificate,
}

impl ClientAuthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientAuthMethod::None => "none",
            ClientAuthMethod::StaticToken => "static_token",
            ClientAuthMethod::ClientCertificate => "client_certificate",
        }
    }
}

/// How the initial static token reached the client.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    #[default]
    Secure,
    Insecure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticToken {
    pub link: LinkId,
    pub secret: Term,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeFailureReason {
    BadServerChain,
    BadClientChain,
    UnapprovedSuite,
    MissingPrivateKey,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("handshake on {link} failed: {reason:?}")]
    HandshakeFailure {
        link: LinkId,
        reason: HandshakeFailureReason,
    },
    #[error("peer {0} is offline")]
    PeerOffline(ActorId),
    #[error("session on {0} is closed")]
    SessionClosed(LinkId),
    #[error("client on {0} is not authenticated")]
    NotAuthenticated(LinkId),
    #[error("{actor} is not an endpoint of {link}")]
    NotEndpoint { link: LinkId, actor: ActorId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub link: LinkId,
    pub client: ActorId,
    pub server: ActorId,
    pub mode: LinkMode,
    pub authenticated_server: Option<ActorId>,
    pub authenticated_client: Option<ActorId>,
    /// Set once a static token has been accepted on this session.
    pub token_client: Option<ActorId>,
    pub established: bool,
    /// Traffic key shared by the two endpoints; `None` on plain sessions.
    pub session_key: Option<Term>,
}

impl Session {
    /// What a wiretap sees of `content` on this session.
    pub fn wire_view(&self, content: &Term) -> Term {
        match &self.session_key {
            Some(k) => Term::enc(k.clone(), content.clone()),
            None => content.clone(),
        }
    }

    pub fn close(&mut self) {
        self.established = false;
    }
}

/// Runs the handshake for `link`. The link's `a` side is always the TLS
/// client, whichever side sends first.
pub fn establish(
    topology: &Topology,
    link: &Link,
    fresh: &mut Fresh,
) -> Result<Session, ChannelError> {
    for (end, peer) in [(&link.a, &link.b), (&link.b, &link.a)] {
        let actor = topology
            .actors
            .get(end)
            .ok_or_else(|| ChannelError::NotEndpoint {
                link: link.id.clone(),
                actor: end.clone(),
            })?;
        let peer_role = topology.actors.get(peer).map(|p| p.role);
        // An offline device has lost its backhaul; local hops to other field
        // devices and radio links keep working.
        let local = link.medium == Medium::Nfc || peer_role.is_some_and(|r| r.is_field_device());
        if !actor.online && !local {
            return Err(ChannelError::PeerOffline(end.clone()));
        }
    }
    let mut session = Session {
        link: link.id.clone(),
        client: link.a.clone(),
        server: link.b.clone(),
        mode: link.mode,
        authenticated_server: None,
        authenticated_client: None,
        token_client: None,
        established: true,
        session_key: None,
    };
    if link.mode == LinkMode::Plain {
        return Ok(session);
    }
    let fail = |reason| ChannelError::HandshakeFailure {
        link: link.id.clone(),
        reason,
    };
    if !topology.suites.is_approved(&link.cipher_suite) {
        return Err(fail(HandshakeFailureReason::UnapprovedSuite));
    }
    let client = &topology.actors[&link.a];
    let server = &topology.actors[&link.b];

    let presents_valid = |presenter: &crate::model::Actor, verifier: &crate::model::Actor| {
        presenter.identity_certificate().is_some_and(|cert| {
            topology
                .pki
                .verify_chain_any(cert, &verifier.trusted_anchors)
                && cert.subject == crate::crypto::Subject::Actor(presenter.id.clone())
        })
    };
    let holds_key = |a: &crate::model::Actor| {
        a.identity_certificate()
            .is_some_and(|c| a.holds_private(c.public_key))
    };

    if !presents_valid(server, client) {
        return Err(fail(HandshakeFailureReason::BadServerChain));
    }
    if !holds_key(server) {
        return Err(fail(HandshakeFailureReason::MissingPrivateKey));
    }
    session.authenticated_server = Some(server.id.clone());
    if link.mode == LinkMode::MutualAuth {
        if !presents_valid(client, server) {
            return Err(fail(HandshakeFailureReason::BadClientChain));
        }
        if !holds_key(client) {
            return Err(fail(HandshakeFailureReason::MissingPrivateKey));
        }
        session.authenticated_client = Some(client.id.clone());
    }
    session.session_key = Some(Term::SymKey(format!(
        "session:{}:{:016x}",
        link.id,
        fresh.next_u64()
    )));
    Ok(session)
}

/// Exact comparison of a presented token with the expected secret. The
/// caller records the presentation in the trace.
pub fn authenticate_client_static(
    session: &mut Session,
    presented: &Term,
    expected: &Term,
    as_client: &ActorId,
) -> bool {
    let ok = session.established && presented == expected;
    if ok {
        session.token_client = Some(as_client.clone());
    }
    ok
}

/// Replaces the expected token; the old one stops working immediately.
pub fn rotate_static_token(
    session: &Session,
    expected: &mut Term,
    new_secret: Term,
) -> Result<(), ChannelError> {
    if !session.established {
        return Err(ChannelError::SessionClosed(session.link.clone()));
    }
    if session.token_client.is_none() && session.authenticated_client.is_none() {
        return Err(ChannelError::NotAuthenticated(session.link.clone()));
    }
    *expected = new_secret;
    Ok(())
}
