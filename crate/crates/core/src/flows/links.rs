//! Client authentication on links: explicit exchanges, token rotation and
//! impersonation attempts.

use crate::channel::{self, ClientAuthMethod, LinkMode};
use crate::crypto::Term;
use crate::model::{ActorId, Link, LinkId};
use crate::trace::{EventKind, Presenter};

use super::{FlowError, World};

impl World {
    fn configured_link(&self, link: &LinkId, client: &ActorId) -> Result<Link, FlowError> {
        let l = self
            .topology
            .link(link)
            .cloned()
            .ok_or_else(|| FlowError::Precondition(format!("unknown link {link}")))?;
        if &l.a != client {
            return Err(FlowError::Precondition(format!(
                "{client} is not the client side of {link}"
            )));
        }
        Ok(l)
    }

    /// Opens (or reuses) the session and authenticates the client.
    pub(super) fn exchange(&mut self, link: &LinkId, client: &ActorId) -> Result<(), FlowError> {
        let l = self.configured_link(link, client)?;
        let session = self.session_for(&l)?;
        if l.client_auth == ClientAuthMethod::StaticToken
            && session.token_client.is_none()
            && !self.present_token(&l)?
        {
            return Err(channel::ChannelError::NotAuthenticated(link.clone()).into());
        }
        Ok(())
    }

    pub(super) fn rotate_token(
        &mut self,
        link: &LinkId,
        client: &ActorId,
    ) -> Result<(), FlowError> {
        let l = self.configured_link(link, client)?;
        if l.client_auth != ClientAuthMethod::StaticToken {
            return Err(FlowError::Precondition(format!(
                "{link} does not use static tokens"
            )));
        }
        self.exchange(link, client)?;
        let session = self.sessions[link].clone();
        let new_secret = self.fresh.secret_atom(&format!("token:{link}"));
        let expected = self
            .topology
            .expected_tokens
            .get_mut(link)
            .ok_or_else(|| FlowError::Precondition(format!("{link} has no token")))?;
        channel::rotate_static_token(&session, expected, new_secret.clone())?;
        let holder = self
            .topology
            .actors
            .get_mut(client)
            .expect("link endpoints exist");
        for t in holder.static_secrets.iter_mut().filter(|t| &t.link == link) {
            t.secret = new_secret.clone();
        }
        self.emit(EventKind::TokenRotated {
            link: link.clone(),
            client: client.clone(),
            secured: session.session_key.is_some(),
        });
        // The new token travels inside the session.
        let learned = self.adversary.observe(&session, &new_secret);
        self.emit_all(learned);
        Ok(())
    }

    /// An attacker connects to the server side of `link` claiming to be `client`.
    pub(super) fn impersonate_client(
        &mut self,
        attacker: &str,
        link: &LinkId,
        client: &ActorId,
    ) -> Result<(), FlowError> {
        if self.adversary.spec(attacker).is_none() {
            return Err(FlowError::Precondition(format!(
                "unknown attacker {attacker}"
            )));
        }
        let l = self.configured_link(link, client)?;
        let report = |world: &mut World, accepted: bool, reason: &str| {
            world.emit(EventKind::ClientImpersonation {
                link: link.clone(),
                attacker: attacker.to_string(),
                client: client.clone(),
                accepted,
                reason: reason.to_string(),
            });
        };
        match (l.mode, l.client_auth) {
            (LinkMode::MutualAuth, _) => {
                let key = self.actor(client)?.identity_key().map(|k| k.private_part());
                if key.is_some_and(|k| self.adversary.can_derive(&k)) {
                    report(self, true, "holds the client's private key");
                } else {
                    report(self, false, "cannot complete the client certificate proof");
                }
            }
            (_, ClientAuthMethod::StaticToken) => {
                let expected = self.topology.expected_tokens.get(link).cloned();
                let presented = match &expected {
                    Some(t) if self.adversary.can_derive(t) => t.clone(),
                    _ => Term::atom(format!("guess:{link}")),
                };
                let accepted = expected.as_ref() == Some(&presented);
                self.emit(EventKind::StaticTokenPresented {
                    link: link.clone(),
                    presenter: Presenter::Attacker(attacker.to_string()),
                    secured: l.mode != LinkMode::Plain,
                    bootstrap: l.bootstrap,
                    accepted,
                });
                let reason = if accepted {
                    "presented a valid token"
                } else {
                    "token rejected"
                };
                report(self, accepted, reason);
            }
            _ => report(self, true, "server does not authenticate clients"),
        }
        Ok(())
    }
}
