"""Exception hierarchy shared by every stage of the toolkit.

Each error carries the CLI exit code it maps to, so the command-line layer
never needs a lookup table of its own.
"""


class EcgScanError(Exception):
    exit_code = 1
    stage = "general"


class InputError(EcgScanError, ValueError):
    """Malformed input file or parameter (exit 2)."""

    exit_code = 2
    stage = "input"


class DecodeError(InputError):
    stage = "load"


class DimensionError(InputError):
    stage = "load"


class BoundsError(InputError):
    stage = "crop"


class InvalidParams(InputError):
    stage = "calibrate"


class InvalidSpec(InputError):
    stage = "synthesize"


class SchemaError(InputError):
    stage = "deserialize"


class ValidationError(InputError):
    stage = "validate"


class EmptyMask(EcgScanError):
    exit_code = 3
    stage = "extract_envelopes"


class AllGaps(EcgScanError):
    exit_code = 3
    stage = "fill_gaps"


class WidthMismatch(EcgScanError):
    exit_code = 3
    stage = "average_envelopes"


class DegenerateImage(EcgScanError):
    exit_code = 4
    stage = "estimate_skew"


class DegenerateHistogram(EcgScanError):
    exit_code = 4
    stage = "otsu_threshold"


class AnalysisError(EcgScanError):
    exit_code = 5
    stage = "analysis"


class EmptyFilter(AnalysisError):
    stage = "fir_filter"


class SignalTooShort(AnalysisError):
    stage = "analysis"


class SamplingRateUnsupported(AnalysisError):
    stage = "pan_tompkins"


class TooFewPeaks(AnalysisError):
    stage = "beat_metrics"


class NoPeaks(AnalysisError):
    stage = "delineate_waves"


class NetworkError(EcgScanError):
    exit_code = 6
    stage = "network"


class AuthError(EcgScanError):
    exit_code = 7
    stage = "auth"


class InvalidCredentials(AuthError):
    pass


class Unauthorized(AuthError):
    pass


class NotFound(EcgScanError, KeyError):
    exit_code = 2
    stage = "fetch"

    def __str__(self):
        return Exception.__str__(self)
