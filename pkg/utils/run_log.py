"""Run log: emoji-prefixed progress lines with a bounded history and listeners."""

from datetime import datetime
from typing import Callable, Dict, List

MAX_HISTORY = 100

latest_logs: List[Dict[str, str]] = []
log_callbacks: List[Callable[[Dict[str, str]], None]] = []
_quiet = False


def set_quiet(quiet: bool = True):
    """Suppress printing; history and callbacks still receive every entry"""
    global _quiet
    _quiet = quiet


def add_log_callback(callback: Callable[[Dict[str, str]], None]):
    """Add a callback function to be called when new logs are added"""
    log_callbacks.append(callback)


def remove_log_callback(callback: Callable[[Dict[str, str]], None]):
    if callback in log_callbacks:
        log_callbacks.remove(callback)


def clear_history():
    latest_logs.clear()


def log_message(message: str, level: str = "info") -> Dict[str, str]:
    """Print a log line, record it and notify all callbacks"""
    log_entry = {
        "timestamp": datetime.now().strftime("%H:%M:%S"),
        "level": level,
        "message": message,
    }
    if not _quiet:
        print(message)

    latest_logs.append(log_entry)
    # Keep only the last entries
    if len(latest_logs) > MAX_HISTORY:
        latest_logs.pop(0)

    for callback in list(log_callbacks):
        try:
            callback(log_entry)
        except Exception as e:
            print(f"Error in log callback: {e}")
    return log_entry
