"""
Error types shared by the quantum-policy RL lab.
Each error maps to one of the cli exit codes.
"""

from typing import Dict, Type

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2
EXIT_NUMERICAL = 3


class QrlError(RuntimeError):
    """Base class for all lab errors"""


class ConfigurationError(QrlError, ValueError):
    """Invalid configuration value, size mismatch or unknown key"""


class QubitIndexError(QrlError, IndexError):
    """Qubit or parameter index out of range"""


class DegenerateProbabilityError(QrlError):
    """Raw-PQC log-gradient requested at a probability below the division floor"""


class ProtocolError(QrlError):
    """Environment used outside its reset/step protocol"""


class NumericalBlowupError(QrlError, FloatingPointError):
    """NaN or non-normalized state encountered"""


class DegenerateGeneratorError(QrlError):
    """Rejection sampling of a PQC-generated dataset did not terminate"""


class OracleRefusedError(QrlError):
    """Brute-force discrete log requested for a modulus beyond desk scale"""


class DomainError(QrlError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class CheckFailedError(QrlError):
    """A verification suite reported at least one failing check"""


_EXIT_CODES: Dict[Type[BaseException], int] = {
    ConfigurationError: EXIT_CONFIG,
    OracleRefusedError: EXIT_CONFIG,
    CheckFailedError: EXIT_CHECK_FAILED,
    NumericalBlowupError: EXIT_NUMERICAL,
}


def exit_code_for(exc: BaseException) -> int:
    """Map an exception raised by a subcommand to its process exit code"""
    for exc_type, code in _EXIT_CODES.items():
        if isinstance(exc, exc_type):
            return code
    if isinstance(exc, (ValueError, DomainError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL
