__version__ = '0.4.0'
__versiondate__ = '2026-10-18'
