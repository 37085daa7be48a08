"""Streaming demand forecasting with forecast-breakdown detection."""
