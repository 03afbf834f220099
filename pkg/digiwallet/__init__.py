'''
Purpose:
Transactional digital wallet engine: double-entry ledger, transaction
lifecycle with retries and atomic batches, and hold-based investments.
'''

__version__ = "0.1.0"
