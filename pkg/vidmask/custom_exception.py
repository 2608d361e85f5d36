class VidMaskError(Exception):
    """Base class for every error raised by vidmask. `exit_code` is what the CLI exits with."""

    exit_code = 3

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class ConfigError(VidMaskError):
    exit_code = 2


class DataError(VidMaskError):
    exit_code = 3


class BoxOutOfBoundsError(DataError):
    def __init__(self, index, box, frame_size):
        self.index = index
        self.box = box
        self.frame_size = frame_size
        super().__init__(
            f"box {index} {list(box)} is not a valid half-open box inside a {frame_size[0]}x{frame_size[1]} frame"
        )


class ShapeError(DataError):
    pass


class LocationError(DataError):
    def __init__(self, location, num_tokens):
        self.location = location
        self.num_tokens = num_tokens
        super().__init__(f"token location {location} out of range for {num_tokens} tokens")


class SpecMismatchError(DataError):
    pass


class FormatError(DataError):
    def __init__(self, path, detail):
        self.path = path
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class SceneError(DataError):
    pass


class StateError(VidMaskError):
    exit_code = 3
