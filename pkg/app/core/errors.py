"""Error hierarchy shared by the CLI (exit codes) and the HTTP layer (status codes)."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_TREND = 4


class RePnPError(Exception):
    exit_code = EXIT_USAGE
    status_code = 400

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigError(RePnPError, ValueError):
    exit_code = EXIT_USAGE
    status_code = 400


class ShapeError(RePnPError, ValueError):
    exit_code = EXIT_USAGE
    status_code = 400


class DataError(RePnPError):
    exit_code = EXIT_DATA
    status_code = 422


class NumericalFault(RePnPError):
    exit_code = EXIT_NUMERICAL
    status_code = 500


class TrendViolation(RePnPError):
    exit_code = EXIT_TREND
    status_code = 500
