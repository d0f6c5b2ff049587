"""Error hierarchy shared by every subsystem.

Each error carries a stable ``code`` string used verbatim in wire payloads,
so HTTP handlers and the CLI can round-trip errors without string matching.
"""

from __future__ import annotations


class EregError(Exception):
    """Base class; ``code`` is the wire-level identifier."""

    code = "internal"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__
        self.details = details

    def to_json(self) -> dict:
        payload = {"code": self.code, "message": self.message}
        if self.details:
            payload["details"] = self.details
        return payload


# -- metamodel ---------------------------------------------------------------

class DuplicateType(EregError):
    code = "duplicate_type"


class UnknownEntityType(EregError):
    code = "unknown_entity_type"


class UnknownKeyAttribute(EregError):
    code = "unknown_key_attribute"


class MultiValuedKeyAttribute(EregError):
    code = "multi_valued_key_attribute"


class DuplicateRelationship(EregError):
    code = "duplicate_relationship"


class UnknownRelationship(EregError):
    code = "unknown_relationship"


class SelfContradictionRejected(EregError):
    code = "self_contradiction_rejected"


class TypeMismatch(EregError):
    code = "type_mismatch"


class UnknownAttribute(EregError):
    code = "unknown_attribute"


class InvalidRule(EregError):
    code = "invalid_rule"


# -- corpus ------------------------------------------------------------------

class EmptyDocument(EregError):
    code = "empty_document"


class DuplicateDocId(EregError):
    code = "duplicate_doc_id"


class UnknownDocument(EregError):
    code = "unknown_document"


class TargetUnreachable(EregError):
    code = "target_unreachable"


class SpanOutOfBounds(EregError):
    code = "span_out_of_bounds"


class DanglingEntityRef(EregError):
    code = "dangling_entity_ref"


class UnknownAnnotation(EregError):
    code = "unknown_annotation"


class EntityCopyFailed(EregError):
    code = "entity_copy_failed"


class EmptyQuery(EregError):
    code = "empty_query"


# -- entity register ---------------------------------------------------------

class ValidationError(EregError):
    code = "validation_error"


class NotAKey(EregError):
    code = "not_a_key"


class UnknownEntity(EregError):
    code = "unknown_entity"


class ConstraintViolation(EregError):
    """Base for relationship-insertion violations."""

    code = "constraint_violation"


class CardinalityViolation(ConstraintViolation):
    code = "cardinality_violation"


class ContradictionViolation(ConstraintViolation):
    code = "contradiction_violation"


class ReverseDirectionViolation(ConstraintViolation):
    code = "reverse_direction_violation"


class MissingValidity(ConstraintViolation):
    code = "missing_validity"


class IncompatibleAttributes(EregError):
    code = "incompatible_attributes"


class EntityTypeMismatch(EregError):
    code = "entity_type_mismatch"


class IncompletePartition(EregError):
    code = "incomplete_partition"


class ReferentialIntegrity(EregError):
    code = "referential_integrity"


# -- access control ----------------------------------------------------------

class PermissionDenied(EregError):
    code = "permission_denied"


class PseudonymCollision(EregError):
    code = "pseudonym_collision"


# -- federation --------------------------------------------------------------

class UnknownParent(EregError):
    code = "unknown_parent"


class TopLevelUnreachable(EregError):
    code = "top_level_unreachable"


class UnknownInstance(EregError):
    code = "unknown_instance"


class MetamodelMismatch(EregError):
    code = "metamodel_mismatch"


class OutOfOrderDelivery(EregError):
    code = "out_of_order_delivery"


class AlreadyResolved(EregError):
    code = "already_resolved"


class UnauthorizedActor(EregError):
    code = "unauthorized_actor"


class InvalidDecision(EregError):
    code = "invalid_decision"


class UnknownGlobalEntity(EregError):
    code = "unknown_global_entity"


class UnknownRequest(EregError):
    code = "unknown_request"


# -- query engine ------------------------------------------------------------

class InvalidDepth(EregError):
    code = "invalid_depth"


class UnknownToken(EregError):
    code = "unknown_token"


# -- service / CLI -----------------------------------------------------------

class ConfigError(EregError):
    code = "config_error"


class AddressInUse(EregError):
    code = "address_in_use"


class RegistrationFailed(EregError):
    code = "registration_failed"


class StepFailed(EregError):
    code = "step_failed"


_BY_CODE = {cls.code: cls for cls in list(globals().values())
            if isinstance(cls, type) and issubclass(cls, EregError)}


def from_code(code: str, message: str = "", **details) -> EregError:
    """Rebuild a typed error from a wire payload; unknown codes degrade to base."""
    return _BY_CODE.get(code, EregError)(message, **details)
