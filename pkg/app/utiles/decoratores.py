import inspect
import sys
from functools import wraps

from fastapi import HTTPException
from pydantic import ValidationError

from app.core.errors import TailError
from app.utiles.logger import get_logger

logger = get_logger(__name__)

PROPERTY_FAILURE = 3


def _status_for(e: Exception) -> int:
    if isinstance(e, LookupError):
        return 404
    if getattr(e, "exit_code", 1) == 2:
        return 409
    return 400


def handle_exceptions(func):
    """HTTP endpoints: HTTPException passes through, domain errors map to 4xx, the rest to 500."""
    if inspect.iscoroutinefunction(func):
        @wraps(func)
        async def wrapper(*args, **kwargs):
            try:
                logger.info(f"Calling function: {func.__name__}")
                result = await func(*args, **kwargs)
                logger.info(f"Function {func.__name__} completed successfully")
                return result
            except HTTPException as he:
                logger.warning(f"HTTPException in {func.__name__}: {he.detail}")
                raise he
            except (TailError, LookupError) as e:
                logger.warning(f"{type(e).__name__} in {func.__name__}: {e}")
                raise HTTPException(status_code=_status_for(e), detail=str(e))
            except Exception as e:
                logger.exception(f"Exception in function: {func.__name__} - {str(e)}")
                raise HTTPException(status_code=500, detail="Internal Server Error")
        return wrapper
    else:
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                logger.info(f"Calling function: {func.__name__}")
                result = func(*args, **kwargs)
                logger.info(f"Function {func.__name__} completed successfully")
                return result
            except HTTPException as he:
                logger.warning(f"HTTPException in {func.__name__}: {he.detail}")
                raise he
            except (TailError, LookupError) as e:
                logger.warning(f"{type(e).__name__} in {func.__name__}: {e}")
                raise HTTPException(status_code=_status_for(e), detail=str(e))
            except Exception as e:
                logger.exception(f"Exception in function: {func.__name__} - {str(e)}")
                raise HTTPException(status_code=500, detail="Internal Server Error")
        return wrapper


def exit_code_for(e: Exception, where: str) -> int:
    """Exit code for an error raised in `where`, with a one-line diagnostic on stderr."""
    if isinstance(e, TailError):
        logger.error(f"{type(e).__name__} in {where}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    if isinstance(e, ValidationError):
        logger.error(f"Invalid configuration in {where}: {e}")
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 1
    if isinstance(e, (OSError, ValueError, LookupError)):
        logger.error(f"{type(e).__name__} in {where}: {e}")
    else:
        logger.exception(f"Exception in command: {where} - {str(e)}")
    print(f"error: {e}", file=sys.stderr)
    return 1


def exit_codes(func):
    """
    CLI commands: return the command's own code, or map the raised error to
    the exit-code convention (1 config/IO, 2 incompatibility/divergence).
    """
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            logger.info(f"Calling command: {func.__name__}")
            code = func(*args, **kwargs)
            logger.info(f"Command {func.__name__} finished with exit code {code}")
            return code
        except Exception as e:
            return exit_code_for(e, func.__name__)
    return wrapper
